//! Two-block convolutional activity network.
//!
//! Each block is conv → max-pool → batch norm → ReLU over windows shaped
//! `(channels, 1, window_len)`; a single fully connected layer maps the
//! flattened block-2 output to per-class scores.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::{BatchNormMode, BatchStats, Tape, Tensor, Var};
use crate::rng;

const CHECKPOINT_MAGIC: &[u8; 8] = b"SDMXNET\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub channels: usize,
    pub window_len: usize,
    pub kernel_width: usize,
    pub channels_per_block: [usize; 2],
    pub num_classes: usize,
    /// Pool width; pool stride equals the width.
    pub pool_width: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ArchSpec {
    pub fn new(channels: usize, window_len: usize, kernel_width: usize, num_classes: usize) -> Self {
        Self {
            channels,
            window_len,
            kernel_width,
            channels_per_block: [16, 32],
            num_classes,
            pool_width: 2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, 1, self.window_len]
    }

    /// Width after each of conv1, pool1, conv2, pool2.
    pub fn extents(&self) -> Result<[usize; 4]> {
        let bad = |layer: &str, reason: String| Error::Arch {
            layer: layer.to_string(),
            reason,
        };
        if self.channels == 0 {
            return Err(bad("input", "zero channels".into()));
        }
        if self.num_classes < 2 {
            return Err(bad("classifier", format!("{} classes", self.num_classes)));
        }
        if self.kernel_width == 0 || self.pool_width == 0 {
            return Err(bad("block1.conv", "zero kernel or pool width".into()));
        }
        if self.channels_per_block.contains(&0) {
            return Err(bad("block1.conv", "zero output channels".into()));
        }
        let conv = |layer: &str, len: usize| -> Result<usize> {
            if len < self.kernel_width {
                return Err(bad(
                    layer,
                    format!("width {len} smaller than kernel {}", self.kernel_width),
                ));
            }
            Ok(len - self.kernel_width + 1)
        };
        let pool = |layer: &str, len: usize| -> Result<usize> {
            if len < self.pool_width {
                return Err(bad(
                    layer,
                    format!("width {len} smaller than pool {}", self.pool_width),
                ));
            }
            Ok((len - self.pool_width) / self.pool_width + 1)
        };
        let c1 = conv("block1.conv", self.window_len)?;
        let p1 = pool("block1.pool", c1)?;
        let c2 = conv("block2.conv", p1)?;
        let p2 = pool("block2.pool", c2)?;
        Ok([c1, p1, c2, p2])
    }

    pub fn feature_dim(&self) -> Result<usize> {
        Ok(self.channels_per_block[1] * self.extents()?[3])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    pub bn_gamma: Tensor,
    pub bn_beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivityNet {
    pub arch: ArchSpec,
    pub blocks: [ConvBlock; 2],
    pub fc_w: Tensor,
    pub fc_b: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Tape handles for the trainable parameters, in [`ActivityNet::params`] order.
#[derive(Clone, Copy, Debug)]
pub struct BoundParams {
    pub vars: [Var; ActivityNet::NUM_PARAMS],
}

impl BoundParams {
    fn block(&self, b: usize) -> [Var; 4] {
        let o = b * 4;
        [self.vars[o], self.vars[o + 1], self.vars[o + 2], self.vars[o + 3]]
    }

    pub fn fc(&self) -> (Var, Var) {
        (self.vars[8], self.vars[9])
    }
}

fn uniform(shape: &[usize], bound: f64, rng: &mut rng::Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

impl ActivityNet {
    pub const NUM_PARAMS: usize = 10;

    /// Fan-in scaled uniform initialization.
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<Self> {
        let feature_dim = arch.feature_dim()?;
        let mut rng = rng::stream(seed, rng::STREAM_INIT);
        let k = arch.kernel_width;
        let mut blocks = Vec::with_capacity(2);
        let mut cin = arch.channels;
        for &cout in &arch.channels_per_block {
            let bound = 1.0 / ((cin * k) as f64).sqrt();
            blocks.push(ConvBlock {
                conv_w: uniform(&[cout, cin, 1, k], bound, &mut rng),
                conv_b: uniform(&[cout], bound, &mut rng),
                bn_gamma: Tensor::ones(&[cout]),
                bn_beta: Tensor::zeros(&[cout]),
                running_mean: vec![0.0; cout],
                running_var: vec![1.0; cout],
            });
            cin = cout;
        }
        let bound = 1.0 / (feature_dim as f64).sqrt();
        let fc_w = uniform(&[arch.num_classes, feature_dim], bound, &mut rng);
        let fc_b = uniform(&[arch.num_classes], bound, &mut rng);
        let [b1, b2]: [ConvBlock; 2] = blocks.try_into().expect("two blocks");
        Ok(Self {
            arch: arch.clone(),
            blocks: [b1, b2],
            fc_w,
            fc_b,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn params(&self) -> [&Tensor; Self::NUM_PARAMS] {
        let [a, b] = &self.blocks;
        [
            &a.conv_w, &a.conv_b, &a.bn_gamma, &a.bn_beta, &b.conv_w, &b.conv_b, &b.bn_gamma,
            &b.bn_beta, &self.fc_w, &self.fc_b,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; Self::NUM_PARAMS] {
        let [a, b] = &mut self.blocks;
        [
            &mut a.conv_w,
            &mut a.conv_b,
            &mut a.bn_gamma,
            &mut a.bn_beta,
            &mut b.conv_w,
            &mut b.conv_b,
            &mut b.bn_gamma,
            &mut b.bn_beta,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }

    /// Registers parameters on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self.params().map(|p| {
            if trainable {
                tape.leaf(p.clone())
            } else {
                tape.constant(p.clone())
            }
        });
        BoundParams { vars }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let want = self.arch.input_shape();
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::Shape {
                op: "activity_net input",
                lhs: shape.to_vec(),
                rhs: want.to_vec(),
            });
        }
        Ok(())
    }

    /// Feature extractor on the tape; returns `(N, feature_dim)` features and,
    /// in training mode, the batch statistics of both batch norms.
    pub fn forward_features(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<BatchStats>)> {
        self.check_input(tape.value(x)?.shape())?;
        let mut h = x;
        let mut stats = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            let [w, bias, gamma, beta] = params.block(b);
            h = tape.conv_h1(h, w, bias, 1)?;
            h = tape.maxpool_h1(h, self.arch.pool_width, self.arch.pool_width)?;
            let bn_mode = match mode {
                Mode::Train => BatchNormMode::Train,
                Mode::Inference => BatchNormMode::Inference {
                    running_mean: &block.running_mean,
                    running_var: &block.running_var,
                },
            };
            let (y, s) = tape.batchnorm(h, gamma, beta, bn_mode, self.arch.bn_eps)?;
            stats.extend(s);
            h = tape.relu(y)?;
        }
        Ok((tape.flatten(h)?, stats))
    }

    pub fn forward_classifier(&self, tape: &mut Tape, params: &BoundParams, z: Var) -> Result<Var> {
        let (w, b) = params.fc();
        tape.linear(z, w, b)
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn absorb_stats(&mut self, stats: &[BatchStats]) {
        let m = self.arch.bn_momentum;
        for (block, s) in self.blocks.iter_mut().zip(stats) {
            for (r, v) in block.running_mean.iter_mut().zip(&s.mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in block.running_var.iter_mut().zip(&s.var) {
                *r = (1.0 - m) * *r + m * v;
            }
        }
    }

    /// Inference-mode features for a batch `(N, channels, 1, window_len)`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let (z, _) = self.forward_features(&mut tape, &p, xv, Mode::Inference)?;
        Ok(tape.value(z)?.clone())
    }

    /// Inference-mode class scores `(N, C)`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let (z, _) = self.forward_features(&mut tape, &p, xv, Mode::Inference)?;
        let h = self.forward_classifier(&mut tape, &p, z)?;
        Ok(tape.value(h)?.clone())
    }

    /// Classifier scores for a batch of feature vectors `(N, feature_dim)`.
    pub fn classify_features(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let h = self.forward_classifier(&mut tape, &p, zv)?;
        Ok(tape.value(h)?.clone())
    }

    /// `∇_x h_c` for every class `c`, per row of a batch, with batch norm on
    /// running statistics so rows do not interact. Element `c` of the result
    /// has the batch's shape.
    pub fn class_input_gradients_batch(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let xv = tape.leaf(x.clone());
        let (z, _) = self.forward_features(&mut tape, &p, xv, Mode::Inference)?;
        let h = self.forward_classifier(&mut tape, &p, z)?;
        let n = x.shape()[0];
        let c = self.num_classes();
        (0..c)
            .map(|class| {
                let idx: Vec<usize> = (0..n).map(|r| r * c + class).collect();
                let picked = tape.gather(h, &idx)?;
                let total = tape.sum(picked)?;
                tape.input_gradient(total, xv)
            })
            .collect()
    }

    /// `∇_x h_c(x)` for a single window `(channels, 1, window_len)`.
    pub fn class_score_input_gradients(&self, x: &Tensor, classes: &[usize]) -> Result<Vec<Tensor>> {
        let c = self.num_classes();
        if let Some(&bad) = classes.iter().find(|&&k| k >= c) {
            return Err(Error::ClassIndex {
                class: bad,
                num_classes: c,
            });
        }
        let batch = x.unsqueeze0();
        let all = self.class_input_gradients_batch(&batch)?;
        classes
            .iter()
            .map(|&k| all[k].clone().reshape(x.shape()))
            .collect()
    }

    fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend_from_slice(b.conv_w.data());
            out.extend_from_slice(b.conv_b.data());
            out.extend_from_slice(b.bn_gamma.data());
            out.extend_from_slice(b.bn_beta.data());
            out.extend_from_slice(&b.running_mean);
            out.extend_from_slice(&b.running_var);
        }
        out.extend_from_slice(self.fc_w.data());
        out.extend_from_slice(self.fc_b.data());
        out
    }

    /// Versioned binary checkpoint: magic, version, architecture, then every
    /// parameter and running statistic as little-endian `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let a = &self.arch;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [
            a.channels,
            1,
            a.window_len,
            a.kernel_width,
            a.pool_width,
            a.channels_per_block[0],
            a.channels_per_block[1],
            a.num_classes,
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&a.bn_eps.to_le_bytes())?;
        w.write_all(&a.bn_momentum.to_le_bytes())?;
        let values = self.flat_values();
        w.write_all(&(values.len() as u64).to_le_bytes())?;
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let mut dims = [0usize; 8];
        for d in dims.iter_mut() {
            *d = next_u64(&mut r)? as usize;
        }
        if dims[1] != 1 {
            return Err(Error::Checkpoint(format!("input height {} != 1", dims[1])));
        }
        let bn_eps = f64::from_bits(next_u64(&mut r)?);
        let bn_momentum = f64::from_bits(next_u64(&mut r)?);
        let arch = ArchSpec {
            channels: dims[0],
            window_len: dims[2],
            kernel_width: dims[3],
            pool_width: dims[4],
            channels_per_block: [dims[5], dims[6]],
            num_classes: dims[7],
            bn_eps,
            bn_momentum,
        };
        let mut net = Self::init(&arch, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = next_u64(&mut r)? as usize;
        let expected = net.flat_values().len();
        if count != expected {
            return Err(Error::Checkpoint(format!(
                "{count} values, architecture needs {expected}"
            )));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f64::from_bits(next_u64(&mut r)?));
        }
        let mut it = values.into_iter();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = it.next().unwrap());
        for b in net.blocks.iter_mut() {
            fill(b.conv_w.data_mut());
            fill(b.conv_b.data_mut());
            fill(b.bn_gamma.data_mut());
            fill(b.bn_beta.data_mut());
            fill(&mut b.running_mean);
            fill(&mut b.running_var);
        }
        fill(net.fc_w.data_mut());
        fill(net.fc_b.data_mut());
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_checkpoint(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> ArchSpec {
        let mut a = ArchSpec::new(2, 20, 3, 3);
        a.channels_per_block = [3, 4];
        a
    }

    #[test]
    fn init_is_deterministic() {
        let a = small_arch();
        assert_eq!(ActivityNet::init(&a, 7).unwrap(), ActivityNet::init(&a, 7).unwrap());
        assert_ne!(ActivityNet::init(&a, 7).unwrap(), ActivityNet::init(&a, 8).unwrap());
    }

    #[test]
    fn cross_dataset_geometry() {
        // (6,1,50) input, (1,6) kernel: 50 → 45 → 22 → 17 → 8.
        let a = ArchSpec::new(6, 50, 6, 4);
        assert_eq!(a.extents().unwrap(), [45, 22, 17, 8]);
        let net = ActivityNet::init(&a, 0).unwrap();
        assert_eq!(net.fc_w.shape(), &[4, 32 * 8]);
    }

    #[test]
    fn impossible_geometry_names_layer() {
        let a = ArchSpec::new(1, 4, 9, 2);
        let err = ActivityNet::init(&a, 0).unwrap_err();
        assert!(matches!(&err, Error::Arch { layer, .. } if layer == "block1.conv"), "{err}");
    }

    #[test]
    fn zero_classifier_weight_gives_bias() {
        let a = small_arch();
        let mut net = ActivityNet::init(&a, 1).unwrap();
        net.fc_w = Tensor::zeros(net.fc_w.shape());
        net.fc_b = Tensor::from_vec(vec![0.5, -1.0, 2.0]);
        let x = Tensor::full(&[4, 2, 1, 20], 0.3);
        let h = net.logits(&x).unwrap();
        for row in h.data().chunks(3) {
            assert_eq!(row, &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn antisymmetric_classifier() {
        let mut a = small_arch();
        a.num_classes = 2;
        let mut net = ActivityNet::init(&a, 2).unwrap();
        let f = a.feature_dim().unwrap();
        let w: Vec<f64> = net.fc_w.data()[..f].to_vec();
        let mut both = w.clone();
        both.extend(w.iter().map(|v| -v));
        net.fc_w = Tensor::new(vec![2, f], both).unwrap();
        net.fc_b = Tensor::zeros(&[2]);
        let x = Tensor::new(vec![1, 2, 1, 20], (0..40).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        let h = net.logits(&x).unwrap();
        assert_eq!(h.data()[0], -h.data()[1]);
    }

    #[test]
    fn inference_is_batch_independent() {
        let a = small_arch();
        let net = ActivityNet::init(&a, 3).unwrap();
        let batch = Tensor::new(
            vec![8, 2, 1, 20],
            (0..320).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect(),
        )
        .unwrap();
        let all = net.features(&batch).unwrap();
        let one = net.features(&batch.rows(5, 6).unwrap()).unwrap();
        assert!(one.max_abs_diff(&all.rows(5, 6).unwrap()) < 1e-12);
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let a = small_arch();
        let mut net = ActivityNet::init(&a, 4).unwrap();
        for b in net.blocks.iter_mut() {
            b.conv_b = Tensor::zeros(b.conv_b.shape());
            b.running_var = vec![1.0 - a.bn_eps; b.running_var.len()];
        }
        let z = net.features(&Tensor::zeros(&[2, 2, 1, 20])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_classes_give_identical_gradients() {
        let a = small_arch();
        let net = ActivityNet::init(&a, 5).unwrap();
        let x = Tensor::full(&[2, 1, 20], 0.25);
        let g = net.class_score_input_gradients(&x, &[1, 1]).unwrap();
        assert_eq!(g[0], g[1]);
        assert_eq!(g[0].shape(), &[2, 1, 20]);
        assert!(matches!(
            net.class_score_input_gradients(&x, &[3]),
            Err(Error::ClassIndex { class: 3, .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let a = small_arch();
        let mut net = ActivityNet::init(&a, 6).unwrap();
        net.blocks[0].running_mean[1] = 0.1 + 0.2;
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        let back = ActivityNet::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        let mut again = Vec::new();
        back.write_checkpoint(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(ActivityNet::read_checkpoint(&b"NOTACKPT0000"[..]).is_err());
    }
}
