//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value produced during one forward
//! pass. Operations append nodes in execution order, so the node list is
//! already topologically sorted and backward is a single reverse sweep.
//! Tapes are rebuilt for every training step.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: u64,
    id: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }
}

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as accumulated into running statistics.
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with frozen running statistics.
    Inference {
        running_mean: &'a [f64],
        running_var: &'a [f64],
    },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    ConvH1 {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
    },
    MaxPoolH1 {
        x: usize,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu {
        x: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        s: f64,
    },
    Mix {
        a: usize,
        b: usize,
        lambdas: Vec<f64>,
    },
    MulConst {
        a: usize,
        c: Vec<f64>,
    },
    AddConst {
        a: usize,
    },
    Sum {
        a: usize,
    },
    Reshape {
        a: usize,
    },
    SliceRows {
        a: usize,
        start: usize,
    },
    Gather {
        a: usize,
        idx: Vec<usize>,
    },
    LogSoftmax {
        a: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward pass.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf of a tape.
#[derive(Clone, Debug)]
pub struct Gradients {
    tape: u64,
    by_node: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.by_node.get(&v.id)
    }

    /// Gradient map keyed by node id.
    pub fn into_map(self) -> BTreeMap<usize, Tensor> {
        self.by_node
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            id: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::Detached);
        }
        Ok(v.id)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Differentiable input (parameter or input window).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Value that participates in no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    /// Valid 1-D convolution over `(N, Cin, 1, L)` with kernel `(Cout, Cin, 1, K)`.
    pub fn conv_h1(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (xi, wi, bi) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let xs = self.nodes[xi].value.shape();
        let ws = self.nodes[wi].value.shape();
        let bs = self.nodes[bi].value.shape();
        if xs.len() != 4 || xs[2] != 1 {
            return Err(shape_err("conv_h1 input", xs, &[0, 0, 1, 0]));
        }
        if ws.len() != 4 || ws[2] != 1 || ws[1] != xs[1] {
            return Err(shape_err("conv_h1 kernel", xs, ws));
        }
        if bs != [ws[0]] {
            return Err(shape_err("conv_h1 bias", ws, bs));
        }
        if stride == 0 || ws[3] == 0 || ws[3] > xs[3] {
            return Err(shape_err("conv_h1 extent", xs, ws));
        }
        let (n, cin, len) = (xs[0], xs[1], xs[3]);
        let (cout, k) = (ws[0], ws[3]);
        let lo = (len - k) / stride + 1;
        let xv = self.nodes[xi].value.data();
        let wv = self.nodes[wi].value.data();
        let bv = self.nodes[bi].value.data();
        let mut out = vec![0.0; n * cout * lo];
        for s in 0..n {
            for o in 0..cout {
                let dst = &mut out[(s * cout + o) * lo..(s * cout + o + 1) * lo];
                dst.iter_mut().for_each(|v| *v = bv[o]);
                for c in 0..cin {
                    let src = &xv[(s * cin + c) * len..(s * cin + c + 1) * len];
                    let ker = &wv[(o * cin + c) * k..(o * cin + c + 1) * k];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let win = &src[j * stride..j * stride + k];
                        *d += win.iter().zip(ker).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, cout, 1, lo], out)?;
        let rg = self.rg(&[xi, wi, bi]);
        Ok(self.push(
            value,
            Op::ConvH1 {
                x: xi,
                w: wi,
                b: bi,
                stride,
            },
            rg,
        ))
    }

    /// Max pooling along the width of `(N, C, 1, L)`.
    pub fn maxpool_h1(&mut self, x: Var, width: usize, stride: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let xs = self.nodes[xi].value.shape();
        if xs.len() != 4 || xs[2] != 1 || width == 0 || stride == 0 || width > xs[3] {
            return Err(shape_err("maxpool_h1", xs, &[width, stride]));
        }
        let (rows, len) = (xs[0] * xs[1], xs[3]);
        let lo = (len - width) / stride + 1;
        let shape = vec![xs[0], xs[1], 1, lo];
        let xv = self.nodes[xi].value.data();
        let mut out = Vec::with_capacity(rows * lo);
        let mut argmax = Vec::with_capacity(rows * lo);
        for r in 0..rows {
            for j in 0..lo {
                let base = r * len + j * stride;
                let mut best = base;
                for p in base + 1..base + width {
                    if xv[p] > xv[best] {
                        best = p;
                    }
                }
                out.push(xv[best]);
                argmax.push(best);
            }
        }
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::MaxPoolH1 { x: xi, argmax }, rg))
    }

    /// Per-channel batch normalization; channel axis is 1, statistics pool
    /// over the batch axis and every axis after the channel.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (xi, gi, bi) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        if xs.len() < 2 {
            return Err(shape_err("batchnorm", &xs, &[0, 0]));
        }
        let (n, ch) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        for p in [gi, bi] {
            if self.nodes[p].value.shape() != [ch] {
                return Err(shape_err("batchnorm affine", &xs, self.nodes[p].value.shape()));
            }
        }
        let count = n * inner;
        let xv = self.nodes[xi].value.data();
        let mut mean = vec![0.0; ch];
        let mut var = vec![0.0; ch];
        let mut stats = None;
        match mode {
            BatchNormMode::Train => {
                if count < 2 {
                    return Err(shape_err("batchnorm batch", &xs, &[2]));
                }
                for s in 0..n {
                    for c in 0..ch {
                        let off = (s * ch + c) * inner;
                        mean[c] += xv[off..off + inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for s in 0..n {
                    for c in 0..ch {
                        let off = (s * ch + c) * inner;
                        var[c] += xv[off..off + inner]
                            .iter()
                            .map(|v| (v - mean[c]).powi(2))
                            .sum::<f64>();
                    }
                }
                let unbiased = var.iter().map(|v| v / (count - 1) as f64).collect();
                var.iter_mut().for_each(|v| *v /= count as f64);
                stats = Some(BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                });
            }
            BatchNormMode::Inference {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != ch || running_var.len() != ch {
                    return Err(shape_err("batchnorm running stats", &xs, &[running_mean.len()]));
                }
                mean.copy_from_slice(running_mean);
                var.copy_from_slice(running_var);
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.nodes[gi].value.data();
        let bv = self.nodes[bi].value.data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for s in 0..n {
            for c in 0..ch {
                let off = (s * ch + c) * inner;
                for p in off..off + inner {
                    xhat[p] = (xv[p] - mean[c]) * inv_std[c];
                    out[p] = gv[c] * xhat[p] + bv[c];
                }
            }
        }
        let rg = self.rg(&[xi, gi, bi]);
        let batch_stats = stats.is_some();
        let v = self.push(
            Tensor::new(xs, out)?,
            Op::BatchNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let t = &self.nodes[xi].value;
        let out = t.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(value, Op::Relu { x: xi }, rg))
    }

    /// `x (N, F) · wᵀ (F, O) + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let xs = self.nodes[xi].value.shape();
        let ws = self.nodes[wi].value.shape();
        let bs = self.nodes[bi].value.shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("linear", xs, ws));
        }
        if bs != [ws[0]] {
            return Err(shape_err("linear bias", ws, bs));
        }
        let (n, f, o) = (xs[0], xs[1], ws[0]);
        let xv = self.nodes[xi].value.data();
        let wv = self.nodes[wi].value.data();
        let bv = self.nodes[bi].value.data();
        let mut out = vec![0.0; n * o];
        for s in 0..n {
            let row = &xv[s * f..(s + 1) * f];
            for k in 0..o {
                let wr = &wv[k * f..(k + 1) * f];
                out[s * o + k] = bv[k] + row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let rg = self.rg(&[xi, wi, bi]);
        Ok(self.push(
            Tensor::new(vec![n, o], out)?,
            Op::Linear {
                x: xi,
                w: wi,
                b: bi,
            },
            rg,
        ))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str) -> Result<(usize, usize)> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.nodes[ai].value.shape(), self.nodes[bi].value.shape());
        if sa != sb {
            return Err(shape_err(name, sa, sb));
        }
        Ok((ai, bi))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.binary(a, b, "add")?;
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.rg(&[ai, bi]);
        Ok(self.push(value, Op::Add { a: ai, b: bi }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.binary(a, b, "mul")?;
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.rg(&[ai, bi]);
        Ok(self.push(value, Op::Mul { a: ai, b: bi }, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ai = self.check(a)?;
        let t = &self.nodes[ai].value;
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * s).collect())?;
        let rg = self.nodes[ai].requires_grad;
        Ok(self.push(value, Op::Scale { a: ai, s }, rg))
    }

    /// Row-wise convex combination `λ_r·a_r + (1 − λ_r)·b_r` along the
    /// leading axis, one λ per row.
    pub fn mix(&mut self, a: Var, b: Var, lambdas: &[f64]) -> Result<Var> {
        let (ai, bi) = self.binary(a, b, "mix")?;
        let ta = &self.nodes[ai].value;
        let tb = &self.nodes[bi].value;
        if ta.shape().is_empty() || ta.shape()[0] != lambdas.len() {
            return Err(shape_err("mix lambdas", ta.shape(), &[lambdas.len()]));
        }
        let stride = ta.len() / lambdas.len();
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .enumerate()
            .map(|(p, (x, y))| {
                let l = lambdas[p / stride];
                l * x + (1.0 - l) * y
            })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.rg(&[ai, bi]);
        Ok(self.push(
            value,
            Op::Mix {
                a: ai,
                b: bi,
                lambdas: lambdas.to_vec(),
            },
            rg,
        ))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let ai = self.check(a)?;
        let t = &self.nodes[ai].value;
        if t.shape() != c.shape() {
            return Err(shape_err("mul_const", t.shape(), c.shape()));
        }
        let out = t.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.nodes[ai].requires_grad;
        Ok(self.push(
            value,
            Op::MulConst {
                a: ai,
                c: c.data().to_vec(),
            },
            rg,
        ))
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let ai = self.check(a)?;
        let t = &self.nodes[ai].value;
        if t.shape() != c.shape() {
            return Err(shape_err("add_const", t.shape(), c.shape()));
        }
        let out = t.data().iter().zip(c.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.nodes[ai].requires_grad;
        Ok(self.push(value, Op::AddConst { a: ai }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let s = self.nodes[ai].value.data().iter().sum();
        let rg = self.nodes[ai].requires_grad;
        Ok(self.push(Tensor::scalar(s), Op::Sum { a: ai }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ai = self.check(a)?;
        let value = self.nodes[ai].value.clone().reshape(shape)?;
        let rg = self.nodes[ai].requires_grad;
        Ok(self.push(value, Op::Reshape { a: ai }, rg))
    }

    /// Flattens everything after the leading axis.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a)?.shape().to_vec();
        let n = shape.first().copied().unwrap_or(1);
        let rest = shape.iter().skip(1).product();
        self.reshape(a, &[n, rest])
    }

    /// Leading-axis rows `[start, end)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ai = self.check(a)?;
        let value = self.nodes[ai].value.rows(start, end)?;
        let rg = self.nodes[ai].requires_grad;
        Ok(self.push(value, Op::SliceRows { a: ai, start }, rg))
    }

    /// Selects flat elements by index into a 1-D result.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ai = self.check(a)?;
        let t = &self.nodes[ai].value;
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.len()) {
            return Err(shape_err("gather", t.shape(), &[bad]));
        }
        let out = idx.iter().map(|&i| t.data()[i]).collect();
        let rg = self.nodes[ai].requires_grad;
        Ok(self.push(
            Tensor::from_vec(out),
            Op::Gather {
                a: ai,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise log-softmax of an `(N, C)` matrix.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let t = &self.nodes[ai].value;
        if t.shape().len() != 2 {
            return Err(shape_err("log_softmax", t.shape(), &[0, 0]));
        }
        let c = t.shape()[1];
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.nodes[ai].requires_grad;
        Ok(self.push(value, Op::LogSoftmax { a: ai }, rg))
    }

    /// Gradient of `loss` with respect to every leaf of the tape.
    ///
    /// Leaves that `loss` does not depend on receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        let shape = self.nodes[root].value.shape();
        if self.nodes[root].value.len() != 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        let mut grads = self.propagate(root);
        let by_node = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf))
            .map(|(i, n)| {
                let g = match grads[i].take() {
                    Some(g) => Tensor::new(n.value.shape().to_vec(), g),
                    None => Ok(Tensor::zeros(n.value.shape())),
                };
                g.map(|g| (i, g))
            })
            .collect::<Result<_>>()?;
        Ok(Gradients {
            tape: self.id,
            by_node,
        })
    }

    /// Gradient of a scalar score with respect to one node.
    ///
    /// Fails with [`Error::NoDependency`] when `x` is not an ancestor of
    /// `score`, so miswired graphs are never silently given zero gradients.
    pub fn input_gradient(&self, score: Var, x: Var) -> Result<Tensor> {
        let root = self.check(score)?;
        let xi = self.check(x)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::NotScalar(self.nodes[root].value.shape().to_vec()));
        }
        if xi > root || !self.nodes[xi].requires_grad {
            return Err(Error::NoDependency);
        }
        let mut grads = self.propagate(root);
        match grads[xi].take() {
            Some(g) => Tensor::new(self.nodes[xi].value.shape().to_vec(), g),
            None => Err(Error::NoDependency),
        }
    }

    fn propagate(&self, root: usize) -> Vec<Option<Vec<f64>>> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.step_back(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads
    }

    fn step_back(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let rg = |j: usize| self.nodes[j].requires_grad;
        let len = |j: usize| self.nodes[j].value.len();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::ConvH1 { x, w, b, stride } => {
                let xs = self.nodes[*x].value.shape();
                let ws = self.nodes[*w].value.shape();
                let (n, cin, l) = (xs[0], xs[1], xs[3]);
                let (cout, k) = (ws[0], ws[3]);
                let lo = node.value.shape()[3];
                let xv = self.nodes[*x].value.data();
                let wv = self.nodes[*w].value.data();
                if rg(*b) {
                    let db = accumulate(&mut grads[*b], cout);
                    for s in 0..n {
                        for o in 0..cout {
                            let off = (s * cout + o) * lo;
                            db[o] += g[off..off + lo].iter().sum::<f64>();
                        }
                    }
                }
                if rg(*w) {
                    let dw = accumulate(&mut grads[*w], wv.len());
                    for s in 0..n {
                        for o in 0..cout {
                            let go = &g[(s * cout + o) * lo..(s * cout + o + 1) * lo];
                            for c in 0..cin {
                                let src = &xv[(s * cin + c) * l..(s * cin + c + 1) * l];
                                let dk = &mut dw[(o * cin + c) * k..(o * cin + c + 1) * k];
                                for (j, gj) in go.iter().enumerate() {
                                    let win = &src[j * stride..j * stride + k];
                                    for (d, xv) in dk.iter_mut().zip(win) {
                                        *d += gj * xv;
                                    }
                                }
                            }
                        }
                    }
                }
                if rg(*x) {
                    let dx = accumulate(&mut grads[*x], xv.len());
                    for s in 0..n {
                        for o in 0..cout {
                            let go = &g[(s * cout + o) * lo..(s * cout + o + 1) * lo];
                            for c in 0..cin {
                                let ker = &wv[(o * cin + c) * k..(o * cin + c + 1) * k];
                                let base = (s * cin + c) * l;
                                for (j, gj) in go.iter().enumerate() {
                                    let dst = &mut dx[base + j * stride..base + j * stride + k];
                                    for (d, kv) in dst.iter_mut().zip(ker) {
                                        *d += gj * kv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPoolH1 { x, argmax } => {
                let dx = accumulate(&mut grads[*x], len(*x));
                for (gv, &src) in g.iter().zip(argmax) {
                    dx[src] += gv;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let xs = self.nodes[*x].value.shape();
                let (n, ch) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let mut sum_g = vec![0.0; ch];
                let mut sum_gx = vec![0.0; ch];
                for s in 0..n {
                    for c in 0..ch {
                        let off = (s * ch + c) * inner;
                        for p in off..off + inner {
                            sum_g[c] += g[p];
                            sum_gx[c] += g[p] * xhat[p];
                        }
                    }
                }
                if rg(*gamma) {
                    let d = accumulate(&mut grads[*gamma], ch);
                    d.iter_mut().zip(&sum_gx).for_each(|(a, b)| *a += b);
                }
                if rg(*beta) {
                    let d = accumulate(&mut grads[*beta], ch);
                    d.iter_mut().zip(&sum_g).for_each(|(a, b)| *a += b);
                }
                if rg(*x) {
                    let gv = self.nodes[*gamma].value.data();
                    let m = (n * inner) as f64;
                    let dx = accumulate(&mut grads[*x], n * ch * inner);
                    for s in 0..n {
                        for c in 0..ch {
                            let scale = gv[c] * inv_std[c];
                            let off = (s * ch + c) * inner;
                            for p in off..off + inner {
                                dx[p] += if *batch_stats {
                                    scale * (g[p] - sum_g[c] / m - xhat[p] * sum_gx[c] / m)
                                } else {
                                    scale * g[p]
                                };
                            }
                        }
                    }
                }
            }
            Op::Relu { x } => {
                let xv = self.nodes[*x].value.data();
                let dx = accumulate(&mut grads[*x], xv.len());
                for ((d, gv), xv) in dx.iter_mut().zip(g).zip(xv) {
                    if *xv > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.nodes[*x].value.shape();
                let (n, f) = (xs[0], xs[1]);
                let o = self.nodes[*w].value.shape()[0];
                let xv = self.nodes[*x].value.data();
                let wv = self.nodes[*w].value.data();
                if rg(*b) {
                    let db = accumulate(&mut grads[*b], o);
                    for row in g.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
                if rg(*w) {
                    let dw = accumulate(&mut grads[*w], o * f);
                    for s in 0..n {
                        let xr = &xv[s * f..(s + 1) * f];
                        for k in 0..o {
                            let gk = g[s * o + k];
                            let dr = &mut dw[k * f..(k + 1) * f];
                            dr.iter_mut().zip(xr).for_each(|(d, x)| *d += gk * x);
                        }
                    }
                }
                if rg(*x) {
                    let dx = accumulate(&mut grads[*x], n * f);
                    for s in 0..n {
                        let dr = &mut dx[s * f..(s + 1) * f];
                        for k in 0..o {
                            let gk = g[s * o + k];
                            let wr = &wv[k * f..(k + 1) * f];
                            dr.iter_mut().zip(wr).for_each(|(d, w)| *d += gk * w);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for j in [*a, *b] {
                    if rg(j) {
                        let d = accumulate(&mut grads[j], g.len());
                        d.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::Mul { a, b } => {
                for (j, other) in [(*a, *b), (*b, *a)] {
                    if rg(j) {
                        let ov = self.nodes[other].value.data();
                        let d = accumulate(&mut grads[j], g.len());
                        for ((d, v), o) in d.iter_mut().zip(g).zip(ov) {
                            *d += v * o;
                        }
                    }
                }
            }
            Op::Scale { a, s } => {
                let d = accumulate(&mut grads[*a], g.len());
                d.iter_mut().zip(g).for_each(|(d, v)| *d += v * s);
            }
            Op::Mix { a, b, lambdas } => {
                let stride = g.len() / lambdas.len();
                if rg(*a) {
                    let d = accumulate(&mut grads[*a], g.len());
                    for (p, (d, v)) in d.iter_mut().zip(g).enumerate() {
                        *d += lambdas[p / stride] * v;
                    }
                }
                if rg(*b) {
                    let d = accumulate(&mut grads[*b], g.len());
                    for (p, (d, v)) in d.iter_mut().zip(g).enumerate() {
                        *d += (1.0 - lambdas[p / stride]) * v;
                    }
                }
            }
            Op::MulConst { a, c } => {
                let d = accumulate(&mut grads[*a], g.len());
                for ((d, v), c) in d.iter_mut().zip(g).zip(c) {
                    *d += v * c;
                }
            }
            Op::AddConst { a } | Op::Reshape { a } => {
                let d = accumulate(&mut grads[*a], g.len());
                d.iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
            Op::Sum { a } => {
                let d = accumulate(&mut grads[*a], len(*a));
                d.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::SliceRows { a, start } => {
                let d = accumulate(&mut grads[*a], len(*a));
                let stride = g.len() / node.value.shape()[0].max(1);
                let off = start * stride;
                d[off..off + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, v)| *d += v);
            }
            Op::Gather { a, idx } => {
                let d = accumulate(&mut grads[*a], len(*a));
                for (&i, v) in idx.iter().zip(g) {
                    d[i] += v;
                }
            }
            Op::LogSoftmax { a } => {
                let c = node.value.shape()[1];
                let d = accumulate(&mut grads[*a], g.len());
                for ((drow, grow), yrow) in d
                    .chunks_mut(c)
                    .zip(g.chunks(c))
                    .zip(node.value.data().chunks(c))
                {
                    let total: f64 = grow.iter().sum();
                    for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += gv - y.exp() * total;
                    }
                }
            }
        }
    }
}
