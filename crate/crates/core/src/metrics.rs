//! Accuracy, per-class precision/recall/F1 and confusion matrices.

use std::io::Write;

use crate::data::{stack_windows, SensorWindow};
use crate::error::{Error, Result};
use crate::model::ActivityNet;

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    /// `confusion[i][j]` counts windows of true class `i` predicted as `j`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn from_predictions(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Evaluation> {
    if truth.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    if truth.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::ClassIndex {
                class: t.max(p),
                num_classes,
            });
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut precision = Vec::with_capacity(num_classes);
    let mut recall = Vec::with_capacity(num_classes);
    let mut f1 = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = confusion[c][c];
        let predicted_c: usize = (0..num_classes).map(|r| confusion[r][c]).sum();
        let actual_c: usize = confusion[c].iter().sum();
        let p = ratio(tp, predicted_c);
        let r = ratio(tp, actual_c);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let macro_f1 = f1.iter().sum::<f64>() / num_classes as f64;
    Ok(Evaluation {
        metrics: Metrics {
            accuracy: ratio(correct, truth.len()),
            precision,
            recall,
            f1,
            macro_f1,
            count: truth.len(),
        },
        confusion,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_BATCH: usize = 256;

/// Argmax-of-logits predictions under inference-mode batch norm.
pub fn predict(net: &ActivityNet, windows: &[SensorWindow]) -> Result<Vec<usize>> {
    let c = net.num_classes();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(EVAL_BATCH) {
        let h = net.logits(&stack_windows(chunk)?)?;
        out.extend(h.data().chunks(c).map(argmax));
    }
    Ok(out)
}

pub fn evaluate(net: &ActivityNet, windows: &[SensorWindow]) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let truth: Vec<usize> = windows.iter().map(|w| w.y).collect();
    from_predictions(&truth, &predict(net, windows)?, net.num_classes())
}

impl Evaluation {
    /// `class,precision,recall,f1` rows followed by `accuracy`, `macro_f1`
    /// and `count` summary rows.
    pub fn write_metrics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = &self.metrics;
        writeln!(w, "class,precision,recall,f1")?;
        for c in 0..m.f1.len() {
            writeln!(w, "{c},{},{},{}", m.precision[c], m.recall[c], m.f1[c])?;
        }
        writeln!(w, "accuracy,{},,", m.accuracy)?;
        writeln!(w, "macro_f1,{},,", m.macro_f1)?;
        writeln!(w, "count,{},,", m.count)?;
        Ok(())
    }

    /// Header `true\pred,0,1,…`, one row per true class.
    pub fn write_confusion_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let c = self.confusion.len();
        let head: Vec<String> = (0..c).map(|k| k.to_string()).collect();
        writeln!(w, "true\\pred,{}", head.join(","))?;
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{i},{}", cells.join(","))?;
        }
        Ok(())
    }
}
