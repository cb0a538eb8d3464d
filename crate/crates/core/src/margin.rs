//! Large-margin loss on first-order boundary distances.
//!
//! For a sample `x` with label `y`, the distance to the boundary between
//! `y` and a competitor `c` is approximated by
//! `(h_c(x) − h_y(x)) / ‖∇ₓh_c(x) − ∇ₓh_y(x)‖_q`, exact when the scores
//! are affine. The loss sums `max(0, γ + ratio)` over the `top_c` most
//! violating competitors. The gradient-norm denominator is treated as a
//! constant when differentiating.

use crate::error::{Error, Result};
use crate::model::{ActivityNet, BoundParams, Mode};
use crate::numerics::{Tape, Tensor, Var};
use crate::semantics::{MixSpace, MixedSample};

#[derive(Clone, Debug, PartialEq)]
pub struct MarginConfig {
    /// Target margin, in raw score units.
    pub gamma: f64,
    /// Number of competing classes aggregated.
    pub top_c: usize,
    /// Norm order of the perturbation; gradients are measured in the dual
    /// norm `q = p / (p − 1)`.
    pub p: f64,
    pub denom_floor: f64,
    /// Threshold for counting virtual noisy instances (diagnostic only).
    pub epsilon_noisy: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            top_c: 1,
            p: 2.0,
            denom_floor: 1e-8,
            epsilon_noisy: 0.5,
        }
    }
}

impl MarginConfig {
    pub fn q(&self) -> f64 {
        if self.p == 1.0 {
            f64::INFINITY
        } else if self.p.is_infinite() {
            1.0
        } else {
            self.p / (self.p - 1.0)
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("margin: {m}")));
        if !(self.gamma > 0.0) {
            return bad(format!("gamma {} must be positive", self.gamma));
        }
        if self.top_c == 0 || self.top_c + 1 > num_classes {
            return bad(format!("top_c {} outside 1..={}", self.top_c, num_classes - 1));
        }
        if !(self.p >= 1.0) {
            return bad(format!("p {} must be at least 1", self.p));
        }
        if !(self.denom_floor > 0.0) || !(self.epsilon_noisy > 0.0) {
            return bad("denom_floor and epsilon_noisy must be positive".into());
        }
        Ok(())
    }
}

pub fn lp_norm(v: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        v.iter().map(|x| x.abs()).fold(0.0, f64::max)
    } else if q == 1.0 {
        v.iter().map(|x| x.abs()).sum()
    } else if q == 2.0 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else {
        v.iter().map(|x| x.abs().powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// Exact l2 distance from `x` to the boundary `h_{c1} = h_{c2}` of the affine
/// scores `h(x) = Wx + b`, with `W` shaped `(C, F)`.
pub fn boundary_distance_linear(w: &Tensor, b: &[f64], x: &[f64], c1: usize, c2: usize) -> Result<f64> {
    let s = w.shape();
    if s.len() != 2 || s[1] != x.len() || s[0] != b.len() {
        return Err(Error::Shape {
            op: "boundary_distance_linear",
            lhs: s.to_vec(),
            rhs: vec![b.len(), x.len()],
        });
    }
    for c in [c1, c2] {
        if c >= s[0] {
            return Err(Error::ClassIndex {
                class: c,
                num_classes: s[0],
            });
        }
    }
    let f = s[1];
    let r1 = &w.data()[c1 * f..(c1 + 1) * f];
    let r2 = &w.data()[c2 * f..(c2 + 1) * f];
    let diff: Vec<f64> = r1.iter().zip(r2).map(|(a, b)| a - b).collect();
    let norm = lp_norm(&diff, 2.0);
    if c1 == c2 || norm == 0.0 {
        return Err(Error::DegenerateBoundary(c1, c2));
    }
    let gap: f64 = diff.iter().zip(x).map(|(d, v)| d * v).sum::<f64>() + (b[c1] - b[c2]);
    Ok(gap.abs() / norm)
}

/// Selected active hinge for one (sample, label): `(competitor, γ + ratio,
/// 1 / denominator)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hinge {
    pub class: usize,
    pub value: f64,
    pub inv_denom: f64,
}

/// Picks the `top_c` largest hinge arguments over `c ≠ y` and keeps the
/// positive ones. `denom(c)` returns the raw gradient-difference norm;
/// values under the floor are clamped and counted in `floor_hits`.
pub fn select_hinges(
    scores: &[f64],
    y: usize,
    denom: impl Fn(usize) -> f64,
    cfg: &MarginConfig,
    floor_hits: &mut usize,
) -> Vec<Hinge> {
    let mut cands: Vec<Hinge> = (0..scores.len())
        .filter(|&c| c != y)
        .map(|c| {
            let mut d = denom(c);
            if !(d >= cfg.denom_floor) {
                d = cfg.denom_floor;
                *floor_hits += 1;
            }
            let inv_denom = 1.0 / d;
            Hinge {
                class: c,
                value: cfg.gamma + (scores[c] - scores[y]) * inv_denom,
                inv_denom,
            }
        })
        .collect();
    cands.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.class.cmp(&b.class)));
    cands.truncate(cfg.top_c);
    cands.retain(|h| h.value > 0.0);
    cands
}

/// One weighted hard-label margin term of a batch loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginTerm {
    pub row: usize,
    pub label: usize,
    pub weight: f64,
}

/// `Σ weight · ℓ(row, label)` over `terms`, recorded on the tape against
/// `logits (N, C)`. `denom(row, label, c)` supplies the gradient-difference
/// norms, which enter as constants.
pub fn margin_loss_on_tape(
    tape: &mut Tape,
    logits: Var,
    terms: &[MarginTerm],
    denom: &dyn Fn(usize, usize, usize) -> f64,
    cfg: &MarginConfig,
    floor_hits: &mut usize,
) -> Result<Var> {
    let h = tape.value(logits)?.clone();
    let c = h.shape()[1];
    let mut idx_c = Vec::new();
    let mut idx_y = Vec::new();
    let mut coeff = Vec::new();
    let mut offset = 0.0;
    for term in terms {
        if term.label >= c {
            return Err(Error::ClassIndex {
                class: term.label,
                num_classes: c,
            });
        }
        let row = &h.data()[term.row * c..(term.row + 1) * c];
        for hinge in select_hinges(row, term.label, |k| denom(term.row, term.label, k), cfg, floor_hits) {
            idx_c.push(term.row * c + hinge.class);
            idx_y.push(term.row * c + term.label);
            coeff.push(term.weight * hinge.inv_denom);
            offset += term.weight * cfg.gamma;
        }
    }
    let hc = tape.gather(logits, &idx_c)?;
    let hy = tape.gather(logits, &idx_y)?;
    let neg = tape.scale(hy, -1.0)?;
    let gap = tape.add(hc, neg)?;
    let scaled = tape.mul_const(gap, &Tensor::from_vec(coeff))?;
    let total = tape.sum(scaled)?;
    tape.add_const(total, &Tensor::scalar(offset))
}

/// Pairwise classifier-row difference norms, `C × C` row-major; the
/// gradient of `h_c − h_y` with respect to the classifier input.
pub fn classifier_denominators(fc_w: &Tensor, q: f64) -> Vec<f64> {
    let (c, f) = (fc_w.shape()[0], fc_w.shape()[1]);
    let w = fc_w.data();
    let mut out = vec![0.0; c * c];
    for a in 0..c {
        for b in 0..c {
            let diff: Vec<f64> = (0..f).map(|k| w[a * f + k] - w[b * f + k]).collect();
            out[a * c + b] = lp_norm(&diff, q);
        }
    }
    out
}

/// Per-row input-gradient difference norms for a batch of windows.
pub struct InputDenominators {
    grads: Vec<Tensor>,
    row_len: usize,
    q: f64,
}

impl InputDenominators {
    pub fn new(net: &ActivityNet, x: &Tensor, q: f64) -> Result<Self> {
        let grads = net.class_input_gradients_batch(x)?;
        let row_len = x.len() / x.shape()[0];
        Ok(Self { grads, row_len, q })
    }

    pub fn get(&self, row: usize, y: usize, c: usize) -> f64 {
        let span = row * self.row_len..(row + 1) * self.row_len;
        let gy = &self.grads[y].data()[span.clone()];
        let gc = &self.grads[c].data()[span];
        let diff: Vec<f64> = gc.iter().zip(gy).map(|(a, b)| a - b).collect();
        lp_norm(&diff, self.q)
    }
}

/// Margin loss value plus the number of clamped denominators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginValue {
    pub loss: f64,
    pub floor_hits: usize,
}

fn evaluate_terms(net: &ActivityNet, x: &Tensor, space: MixSpace, terms: &[MarginTerm], cfg: &MarginConfig) -> Result<MarginValue> {
    let mut tape = Tape::new();
    let p = net.bind(&mut tape, false);
    let q = cfg.q();
    let mut floor_hits = 0;
    let loss = match space {
        MixSpace::Input => {
            let batch = x.unsqueeze0();
            let dens = InputDenominators::new(net, &batch, q)?;
            let xv = tape.constant(batch);
            let h = logits_on(net, &mut tape, &p, xv)?;
            margin_loss_on_tape(&mut tape, h, terms, &|r, y, c| dens.get(r, y, c), cfg, &mut floor_hits)?
        }
        MixSpace::Feature => {
            let dens = classifier_denominators(&net.fc_w, q);
            let k = net.num_classes();
            let zv = tape.constant(x.clone().reshape(&[1, x.len()])?);
            let h = net.forward_classifier(&mut tape, &p, zv)?;
            margin_loss_on_tape(&mut tape, h, terms, &|_, y, c| dens[c * k + y], cfg, &mut floor_hits)?
        }
    };
    Ok(MarginValue {
        loss: tape.value(loss)?.item()?,
        floor_hits,
    })
}

fn logits_on(net: &ActivityNet, tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var> {
    let (z, _) = net.forward_features(tape, p, x, Mode::Inference)?;
    net.forward_classifier(tape, p, z)
}

/// Hard-label margin loss of one window `(channels, 1, window_len)` under
/// inference-mode batch norm.
pub fn margin_loss_hard(net: &ActivityNet, x: &Tensor, y: usize, cfg: &MarginConfig) -> Result<MarginValue> {
    let term = MarginTerm {
        row: 0,
        label: y,
        weight: 1.0,
    };
    evaluate_terms(net, x, MixSpace::Input, &[term], cfg)
}

/// Hard-label margin loss of one feature vector, entering at the classifier.
pub fn margin_loss_hard_features(net: &ActivityNet, z: &Tensor, y: usize, cfg: &MarginConfig) -> Result<MarginValue> {
    let term = MarginTerm {
        row: 0,
        label: y,
        weight: 1.0,
    };
    evaluate_terms(net, z, MixSpace::Feature, &[term], cfg)
}

/// Margin terms for one mixed sample: `t·ℓ(y₁) + (1 − t)·ℓ(y₂)`, a single
/// term when the labels agree.
pub fn mixed_terms(row: usize, y1: usize, y2: usize, t: f64) -> Vec<MarginTerm> {
    if y1 == y2 {
        return vec![MarginTerm {
            row,
            label: y1,
            weight: 1.0,
        }];
    }
    vec![
        MarginTerm {
            row,
            label: y1,
            weight: t,
        },
        MarginTerm {
            row,
            label: y2,
            weight: 1.0 - t,
        },
    ]
}

/// Margin loss of a mixed sample. In feature space `x_tilde` is a feature
/// vector and the loss enters at the classifier.
pub fn sdmix_loss(net: &ActivityNet, mixed: &MixedSample, space: MixSpace, cfg: &MarginConfig) -> Result<MarginValue> {
    let terms = mixed_terms(0, mixed.y1, mixed.y2, mixed.t);
    evaluate_terms(net, &mixed.x_tilde, space, &terms, cfg)
}

/// Counts rows whose class-probability vector is at least `epsilon` away
/// in l1 from the mixed soft label.
pub fn count_noisy_probs(probs: &[Vec<f64>], labels: &[(usize, usize, f64)], epsilon: f64) -> usize {
    probs
        .iter()
        .zip(labels)
        .filter(|(p, &(y1, y2, t))| {
            let mut target = vec![0.0; p.len()];
            target[y1] += t;
            target[y2] += 1.0 - t;
            let gap: f64 = p.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum();
            gap >= epsilon
        })
        .count()
}

pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Virtual-noisy count for a batch of mixed samples (diagnostic).
pub fn count_virtual_noisy(net: &ActivityNet, mixed: &[MixedSample], space: MixSpace, epsilon: f64) -> Result<usize> {
    if mixed.is_empty() {
        return Ok(0);
    }
    let rows: Vec<Tensor> = mixed.iter().map(|m| m.x_tilde.unsqueeze0()).collect();
    let refs: Vec<&Tensor> = rows.iter().collect();
    let batch = Tensor::stack_rows(&refs)?;
    let logits = match space {
        MixSpace::Input => net.logits(&batch)?,
        MixSpace::Feature => net.classify_features(&batch)?,
    };
    let labels: Vec<_> = mixed.iter().map(|m| (m.y1, m.y2, m.t)).collect();
    Ok(count_noisy_probs(&softmax_rows(&logits), &labels, epsilon))
}
