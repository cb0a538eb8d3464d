//! Leave-one-domain-out runs, hyperparameter sweeps, the 2-D toy boundary
//! demo and synthetic data export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand_distr::{Distribution, StandardNormal};

use crate::config::{DataSource, ExperimentConfig};
use crate::data::{
    generate_synthetic, load_domain_csv, sliding_windows, windows_to_series, write_domain_csv, DomainDataset,
    SensorWindow,
};
use crate::error::{Error, Result};
use crate::metrics::{self, Evaluation};
use crate::numerics::Tensor;
use crate::rng;
use crate::training::{fit, write_history_csv, Algorithm, FitOutcome, TrainConfig};

/// Loads or generates every domain named by the configuration.
pub fn load_domains(cfg: &ExperimentConfig) -> Result<Vec<DomainDataset>> {
    match &cfg.data {
        DataSource::Synthetic { spec, seed } => generate_synthetic(spec, *seed),
        DataSource::Csv {
            files,
            window_len,
            overlap,
        } => {
            let mut out: Vec<DomainDataset> = Vec::new();
            for path in files {
                let series = load_domain_csv(path)?;
                if out.iter().any(|d| d.domain_id == series.domain_id) {
                    return Err(Error::Data(format!(
                        "{}: domain {} appears in more than one file",
                        path.display(),
                        series.domain_id
                    )));
                }
                out.push(DomainDataset {
                    domain_id: series.domain_id,
                    windows: sliding_windows(&series, *window_len, *overlap)?,
                });
            }
            Ok(out)
        }
    }
}

fn target_ids(cfg: &ExperimentConfig, domains: &[DomainDataset]) -> Result<Vec<usize>> {
    let present: BTreeSet<usize> = domains.iter().map(|d| d.domain_id).collect();
    if present.len() < 2 {
        return Err(Error::Data("leave-one-domain-out needs at least two domains".into()));
    }
    if cfg.targets.is_empty() {
        return Ok(present.into_iter().collect());
    }
    for t in &cfg.targets {
        if !present.contains(t) {
            return Err(Error::Config(format!("data.targets: no domain {t}")));
        }
    }
    Ok(cfg.targets.clone())
}

/// Outcome of one (algorithm, seed, target) run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub target: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub dir: PathBuf,
}

pub struct RunReport {
    pub summary: RunSummary,
    pub fit: FitOutcome,
    pub evaluation: Evaluation,
}

pub fn run_dir_name(algorithm: Algorithm, seed: u64, target: usize) -> String {
    format!("{algorithm}_seed{seed}_target{target}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Trains with `target` held out, evaluates on all of its windows and
/// writes `history.csv`, `metrics.csv`, `confusion.csv`, `report.txt`,
/// `checkpoint.bin` and `config.ini` into `dir`.
pub fn run_single(
    cfg: &ExperimentConfig,
    domains: &[DomainDataset],
    train: &TrainConfig,
    target: usize,
    dir: &Path,
) -> Result<RunReport> {
    let test = domains
        .iter()
        .find(|d| d.domain_id == target)
        .ok_or_else(|| Error::Config(format!("no target domain {target}")))?;
    let outcome = fit(train, domains, Some(target))?;
    let evaluation = metrics::evaluate(&outcome.best_net, &test.windows)?;

    fs::create_dir_all(dir)?;
    let echo = ExperimentConfig {
        targets: vec![target],
        algorithms: vec![train.algorithm],
        seeds: vec![train.seed],
        train: train.clone(),
        ..cfg.clone()
    };
    fs::write(dir.join("config.ini"), echo.to_ini())?;
    write_history_csv(&outcome.history, create(&dir.join("history.csv"))?)?;
    evaluation.write_metrics_csv(create(&dir.join("metrics.csv"))?)?;
    evaluation.write_confusion_csv(create(&dir.join("confusion.csv"))?)?;
    outcome.best_net.save(&dir.join("checkpoint.bin"))?;

    let summary = RunSummary {
        algorithm: train.algorithm,
        seed: train.seed,
        target,
        accuracy: evaluation.metrics.accuracy,
        macro_f1: evaluation.metrics.macro_f1,
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_val_accuracy,
        dir: dir.to_path_buf(),
    };
    write_report_txt(&mut create(&dir.join("report.txt"))?, &summary, &outcome, &evaluation, train)?;
    Ok(RunReport {
        summary,
        fit: outcome,
        evaluation,
    })
}

fn write_report_txt<W: Write>(
    w: &mut W,
    s: &RunSummary,
    fit: &FitOutcome,
    eval: &Evaluation,
    train: &TrainConfig,
) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    writeln!(w, "algorithm: {}", s.algorithm)?;
    writeln!(w, "seed: {}", s.seed)?;
    writeln!(w, "target domain: {}", s.target)?;
    let sources: Vec<String> = fit.touched_domains.iter().map(|d| d.to_string()).collect();
    writeln!(w, "source domains: {}", sources.join(", "))?;
    writeln!(
        w,
        "optimizer: adam lr {} with decoupled weight decay {}",
        train.learning_rate, train.weight_decay
    )?;
    writeln!(w, "epochs: {}", fit.history.len())?;
    writeln!(
        w,
        "best epoch: {}",
        fit.best_epoch.map_or("n/a".to_string(), |e| e.to_string())
    )?;
    writeln!(w, "best validation accuracy: {}", opt(fit.best_val_accuracy))?;
    writeln!(w, "target accuracy: {:.4}", eval.metrics.accuracy)?;
    writeln!(w, "target macro-F1: {:.4}", eval.metrics.macro_f1)?;
    writeln!(w, "target windows: {}", eval.metrics.count)?;
    writeln!(w, "degenerate label weights: {}", fit.diagnostics.degenerate_t)?;
    writeln!(w, "margin denominator floor hits: {}", fit.diagnostics.floor_hits)?;
    writeln!(
        w,
        "virtual noisy instances (epsilon {}): {}",
        train.margin.epsilon_noisy, fit.diagnostics.virtual_noisy
    )?;
    writeln!(w, "confusion (rows true, columns predicted):")?;
    for row in &eval.confusion {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
        writeln!(w, "{}", cells.join(""))?;
    }
    w.flush()?;
    Ok(())
}

/// Mean target accuracy and macro-F1 per algorithm, in first-seen order.
pub fn summarize(runs: &[RunSummary]) -> Vec<(Algorithm, usize, f64, f64)> {
    let mut order = Vec::new();
    let mut acc: BTreeMap<Algorithm, (usize, f64, f64)> = BTreeMap::new();
    for r in runs {
        let e = acc.entry(r.algorithm).or_insert_with(|| {
            order.push(r.algorithm);
            (0, 0.0, 0.0)
        });
        e.0 += 1;
        e.1 += r.accuracy;
        e.2 += r.macro_f1;
    }
    order
        .into_iter()
        .map(|a| {
            let (n, s_acc, s_f1) = acc[&a];
            (a, n, s_acc / n as f64, s_f1 / n as f64)
        })
        .collect()
}

fn write_runs_csv(path: &Path, runs: &[RunSummary]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "algorithm,seed,target,accuracy,macro_f1,best_epoch,best_val_accuracy")?;
    for r in runs {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.algorithm,
            r.seed,
            r.target,
            r.accuracy,
            r.macro_f1,
            r.best_epoch.map_or(String::new(), |e| e.to_string()),
            r.best_val_accuracy.map_or(String::new(), |v| v.to_string())
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary_csv(path: &Path, runs: &[RunSummary]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "algorithm,runs,mean_accuracy,mean_macro_f1")?;
    for (a, n, acc, f1) in summarize(runs) {
        writeln!(w, "{a},{n},{acc},{f1}")?;
    }
    w.flush()?;
    Ok(())
}

/// Every configured (algorithm, seed, target) run, each in its own
/// subdirectory of `out`, followed by `runs.csv` and `summary.csv`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let domains = load_domains(cfg)?;
    let targets = target_ids(cfg, &domains)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.ini"), cfg.to_ini())?;
    let mut runs = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &seed in &cfg.seeds {
            for &target in &targets {
                let dir = out.join(run_dir_name(algorithm, seed, target));
                log::info!("run {}", dir.display());
                let report = run_single(cfg, &domains, &cfg.run_config(algorithm, seed), target, &dir)?;
                runs.push(report.summary);
            }
        }
    }
    write_runs_csv(&out.join("runs.csv"), &runs)?;
    write_summary_csv(&out.join("summary.csv"), &runs)?;
    Ok(runs)
}

/// One hyperparameter combination of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub algorithm: Algorithm,
    pub alpha: Option<f64>,
    pub top_c: Option<usize>,
    pub gamma: Option<f64>,
}

impl SweepPoint {
    pub fn name(&self) -> String {
        let mut s = self.algorithm.to_string();
        if let Some(a) = self.alpha {
            s += &format!("_alpha{a}");
        }
        if let Some(c) = self.top_c {
            s += &format!("_top{c}");
        }
        if let Some(g) = self.gamma {
            s += &format!("_gamma{g}");
        }
        s
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut t = base.clone();
        t.algorithm = self.algorithm;
        if let Some(a) = self.alpha {
            t.alpha = a;
        }
        if let Some(c) = self.top_c {
            t.margin.top_c = c;
        }
        if let Some(g) = self.gamma {
            t.margin.gamma = g;
        }
        t
    }
}

/// Cross product of the grids that each algorithm actually uses.
pub fn sweep_points(cfg: &ExperimentConfig, num_classes: usize) -> Vec<SweepPoint> {
    let top_c: Vec<usize> = cfg
        .sweep
        .top_c
        .iter()
        .copied()
        .filter(|&c| {
            let ok = c >= 1 && c < num_classes;
            if !ok {
                log::warn!("sweep: skipping top_c {c} for {num_classes} classes");
            }
            ok
        })
        .collect();
    let mut out = Vec::new();
    for &algorithm in &cfg.algorithms {
        let alphas: Vec<Option<f64>> = if algorithm.mixes() {
            cfg.sweep.alpha.iter().map(|&a| Some(a)).collect()
        } else {
            vec![None]
        };
        let margins: Vec<(Option<usize>, Option<f64>)> = if algorithm.uses_margin() {
            top_c
                .iter()
                .flat_map(|&c| cfg.sweep.gamma.iter().map(move |&g| (Some(c), Some(g))))
                .collect()
        } else {
            vec![(None, None)]
        };
        for &alpha in &alphas {
            for &(top_c, gamma) in &margins {
                out.push(SweepPoint {
                    algorithm,
                    alpha,
                    top_c,
                    gamma,
                });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub point: SweepPoint,
    pub mean_val_accuracy: f64,
    pub mean_target_accuracy: f64,
    pub selected: bool,
}

/// Runs every sweep point over all seeds and targets with up to `jobs`
/// concurrent runs, then selects, per algorithm, the point with the best
/// mean source-validation accuracy (earliest point on ties).
pub fn sweep(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<SweepResult>> {
    cfg.validate()?;
    let domains = load_domains(cfg)?;
    let targets = target_ids(cfg, &domains)?;
    let num_classes = cfg.train.model.num_classes.unwrap_or_else(|| {
        domains
            .iter()
            .flat_map(|d| d.windows.iter().map(|w| w.y))
            .max()
            .unwrap_or(0)
            + 1
    });
    let points = sweep_points(cfg, num_classes);
    fs::create_dir_all(out)?;
    fs::write(out.join("config.ini"), cfg.to_ini())?;

    let mut tasks = Vec::new();
    for p in 0..points.len() {
        for &seed in &cfg.seeds {
            for &target in &targets {
                tasks.push((p, seed, target));
            }
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(tasks.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(p, seed, target)) = tasks.get(k) else { break };
                let point = &points[p];
                let mut train = point.apply(&cfg.train);
                train.seed = seed;
                let dir = out.join(point.name()).join(run_dir_name(point.algorithm, seed, target));
                let r = run_single(cfg, &domains, &train, target, &dir).map(|r| r.summary);
                results.lock().expect("sweep results lock")[k] = Some(r);
            });
        }
    });
    let finished: Vec<RunSummary> = results
        .into_inner()
        .expect("sweep results lock")
        .into_iter()
        .map(|r| r.expect("every sweep task runs"))
        .collect::<Result<_>>()?;

    let mut out_rows = Vec::with_capacity(points.len());
    for (p, point) in points.iter().enumerate() {
        let runs: Vec<&RunSummary> = tasks
            .iter()
            .zip(&finished)
            .filter(|((q, _, _), _)| *q == p)
            .map(|(_, r)| r)
            .collect();
        let n = runs.len().max(1) as f64;
        out_rows.push(SweepResult {
            point: point.clone(),
            mean_val_accuracy: runs.iter().map(|r| r.best_val_accuracy.unwrap_or(0.0)).sum::<f64>() / n,
            mean_target_accuracy: runs.iter().map(|r| r.accuracy).sum::<f64>() / n,
            selected: false,
        });
    }
    for &algorithm in &cfg.algorithms {
        let mut best: Option<usize> = None;
        for (i, r) in out_rows.iter().enumerate() {
            if r.point.algorithm == algorithm && best.is_none_or(|b| r.mean_val_accuracy > out_rows[b].mean_val_accuracy) {
                best = Some(i);
            }
        }
        if let Some(b) = best {
            out_rows[b].selected = true;
        }
    }

    let mut w = create(&out.join("sweep.csv"))?;
    writeln!(w, "algorithm,alpha,top_c,gamma,mean_val_accuracy,mean_target_accuracy,selected")?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in &out_rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.point.algorithm,
            opt(r.point.alpha.map(|v| v.to_string())),
            opt(r.point.top_c.map(|v| v.to_string())),
            opt(r.point.gamma.map(|v| v.to_string())),
            r.mean_val_accuracy,
            r.mean_target_accuracy,
            r.selected
        )?;
    }
    w.flush()?;
    Ok(out_rows)
}

/// Two-dimensional Gaussian classes for the decision-boundary demo.
#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub base_sigma: f64,
    /// Per-class spread multipliers.
    pub sigma_multipliers: Vec<f64>,
    /// Distance of every class mean from the origin, times two.
    pub separation: f64,
    /// Channels of both convolution blocks (acting as dense layers).
    pub hidden: usize,
    pub max_epochs: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    /// The grid spans `[-extent, extent]` on both axes.
    pub extent: f64,
    pub algorithms: Vec<Algorithm>,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            num_classes: 2,
            samples_per_class: 200,
            base_sigma: 0.5,
            sigma_multipliers: vec![1.0, 4.0],
            separation: 3.0,
            hidden: 8,
            max_epochs: 30,
            grid_w: 100,
            grid_h: 100,
            extent: 6.0,
            algorithms: vec![Algorithm::VanillaMixup, Algorithm::SdmixSemanticOnly, Algorithm::SdmixFull],
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("toy: {m}")));
        if !(2..=3).contains(&self.num_classes) {
            return bad("num_classes must be 2 or 3");
        }
        if self.sigma_multipliers.len() != self.num_classes {
            return bad("one sigma multiplier per class");
        }
        if self.sigma_multipliers.iter().chain([&self.base_sigma]).any(|s| !(*s > 0.0)) {
            return bad("spreads must be positive");
        }
        if self.samples_per_class == 0 || self.hidden == 0 || self.grid_w == 0 || self.grid_h == 0 {
            return bad("samples_per_class, hidden and grid sizes must be positive");
        }
        if !(self.extent > 0.0) || !(self.separation >= 0.0) {
            return bad("extent must be positive and separation nonnegative");
        }
        if self.algorithms.is_empty() {
            return bad("algorithms must be nonempty");
        }
        Ok(())
    }

    pub fn mean(&self, class: usize) -> [f64; 2] {
        let angle = 2.0 * std::f64::consts::PI * class as f64 / self.num_classes as f64;
        let r = self.separation / 2.0;
        [r * angle.cos(), r * angle.sin()]
    }

    /// `samples_per_class` points of every class as single-step windows.
    pub fn sample(&self, domain: usize, seed: u64) -> Result<DomainDataset> {
        let mut rng = rng::stream(seed.wrapping_mul(31).wrapping_add(domain as u64), rng::STREAM_SYNTH);
        let mut windows = Vec::with_capacity(self.num_classes * self.samples_per_class);
        for c in 0..self.num_classes {
            let m = self.mean(c);
            let s = self.base_sigma * self.sigma_multipliers[c];
            for _ in 0..self.samples_per_class {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                windows.push(point_window(m[0] + s * a, m[1] + s * b, c, domain)?);
            }
        }
        Ok(DomainDataset {
            domain_id: domain,
            windows,
        })
    }

    fn train_config(&self, base: &TrainConfig, algorithm: Algorithm, seed: u64) -> TrainConfig {
        let mut t = base.clone();
        t.algorithm = algorithm;
        t.seed = seed;
        t.max_epochs = self.max_epochs;
        t.model.kernel_width = 1;
        t.model.pool_width = 1;
        t.model.channels_per_block = [self.hidden, self.hidden];
        t.model.num_classes = Some(self.num_classes);
        t.margin.top_c = t.margin.top_c.min(self.num_classes - 1);
        t
    }
}

fn point_window(x: f64, y: f64, class: usize, domain: usize) -> Result<SensorWindow> {
    Ok(SensorWindow {
        x: Tensor::new(vec![2, 1, 1], vec![x, y])?,
        y: class,
        domain,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub test_accuracy: f64,
    /// Accuracy on test points of the class with the widest spread.
    pub wide_class_accuracy: f64,
    pub grid: PathBuf,
}

/// Trains each configured algorithm on two 2-D Gaussian source domains for
/// every seed and rasterizes the decision regions.
/// Writes `{algorithm}_seed{seed}_grid.csv` (`x,y,predicted_class`) and
/// `toy_summary.csv`.
pub fn toy_boundary_demo(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<ToyResult>> {
    let spec = &cfg.toy;
    spec.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.ini"), cfg.to_ini())?;
    let wide = (0..spec.num_classes)
        .max_by(|&a, &b| spec.sigma_multipliers[a].total_cmp(&spec.sigma_multipliers[b]))
        .unwrap_or(0);
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let train = [spec.sample(0, seed)?, spec.sample(1, seed)?];
        let test = spec.sample(2, seed)?;
        let wide_test: Vec<SensorWindow> = test.windows.iter().filter(|w| w.y == wide).cloned().collect();
        for &algorithm in &spec.algorithms {
            let t = spec.train_config(&cfg.train, algorithm, seed);
            let fit = fit(&t, &train, None)?;
            let net = &fit.best_net;
            let test_accuracy = metrics::evaluate(net, &test.windows)?.metrics.accuracy;
            let wide_class_accuracy = metrics::evaluate(net, &wide_test)?.metrics.accuracy;

            let mut points = Vec::with_capacity(spec.grid_w * spec.grid_h);
            for j in 0..spec.grid_h {
                for i in 0..spec.grid_w {
                    points.push(point_window(grid_coord(i, spec.grid_w, spec.extent), grid_coord(j, spec.grid_h, spec.extent), 0, 0)?);
                }
            }
            let pred = metrics::predict(net, &points)?;
            let grid = out.join(format!("{algorithm}_seed{seed}_grid.csv"));
            let mut w = create(&grid)?;
            writeln!(w, "x,y,predicted_class")?;
            for (p, c) in points.iter().zip(pred) {
                writeln!(w, "{},{},{c}", p.x.data()[0], p.x.data()[1])?;
            }
            w.flush()?;
            results.push(ToyResult {
                algorithm,
                seed,
                test_accuracy,
                wide_class_accuracy,
                grid,
            });
        }
    }
    let mut w = create(&out.join("toy_summary.csv"))?;
    writeln!(w, "algorithm,seed,test_accuracy,wide_class_accuracy")?;
    for r in &results {
        writeln!(w, "{},{},{},{}", r.algorithm, r.seed, r.test_accuracy, r.wide_class_accuracy)?;
    }
    w.flush()?;
    Ok(results)
}

fn grid_coord(i: usize, n: usize, extent: f64) -> f64 {
    if n == 1 {
        0.0
    } else {
        -extent + 2.0 * extent * i as f64 / (n - 1) as f64
    }
}

/// Writes each synthetic domain as `domain{d}.csv` plus a `config.ini`
/// that trains on the exported files.
pub fn gen_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let DataSource::Synthetic { spec, .. } = &cfg.data else {
        return Err(Error::Config("gen-synth needs data.source = synthetic".into()));
    };
    let domains = load_domains(cfg)?;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for d in &domains {
        let name = format!("domain{}.csv", d.domain_id);
        write_domain_csv(&windows_to_series(d)?, &out.join(&name))?;
        files.push(PathBuf::from(name));
    }
    let exported = ExperimentConfig {
        data: DataSource::Csv {
            files: files.clone(),
            window_len: spec.window_len,
            overlap: 0.0,
        },
        ..cfg.clone()
    };
    fs::write(out.join("config.ini"), exported.to_ini())?;
    Ok(files.into_iter().map(|f| out.join(f)).collect())
}
