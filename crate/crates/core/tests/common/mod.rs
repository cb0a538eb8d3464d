#![allow(dead_code)]

use rand::Rng as _;

use sdmix::data::{generate_synthetic, DomainDataset, SyntheticSpec};
use sdmix::numerics::{finite_difference, Tape, Tensor, Var};
use sdmix::rng::Rng;
use sdmix::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> Rng {
    sdmix::rng::seeded(seed)
}

pub fn random_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-3)`.
pub fn rel_error(a: &Tensor, b: &Tensor) -> f64 {
    let norm = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a.data()).max(norm(b.data())).max(1e-3)
}

/// Builds a scalar on a fresh tape from leaves holding `inputs`.
pub type Builder<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

/// Largest relative error between backward and central differences over
/// every input of `build`.
pub fn max_grad_error(inputs: &[Tensor], build: &Builder<'_>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let eval = |probe: &Tensor| -> Result<f64> {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, v)| t.leaf(if j == k { probe.clone() } else { v.clone() }))
                .collect();
            let l = build(&mut t, &vs)?;
            t.value(l)?.item()
        };
        let fd = finite_difference(eval, &inputs[k], FD_STEP).unwrap();
        worst = worst.max(rel_error(grads.get(vars[k]).unwrap(), &fd));
    }
    worst
}

/// Random projection `Σ r ⊙ out` to reduce any output to a scalar.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out)?.shape().to_vec();
    let r = random_tensor(&mut rng(seed ^ 0x5eed), &shape, 1.0);
    let weighted = tape.mul_const(out, &r)?;
    tape.sum(weighted)
}

/// The calibrated benchmark generator: weakly separated classes with a
/// 4:1 noise ratio and strong per-domain offsets.
pub fn benchmark_spec() -> SyntheticSpec {
    SyntheticSpec {
        separation: 0.3,
        noise_sigma: 1.0,
        offset_spread: 1.0,
        ..SyntheticSpec::default()
    }
}

pub fn small_domains(num_domains: usize, windows_per_class: usize, seed: u64) -> Vec<DomainDataset> {
    let spec = SyntheticSpec {
        num_domains,
        windows_per_class,
        window_len: 16,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, seed).unwrap()
}

/// One randomly configured gradient check: `(name, worst relative error)`.
pub type GradCase = (String, f64);

fn bn_case(r: &mut Rng, seed: u64, inference: bool) -> GradCase {
    let (n, c, l) = (r.random_range(2..5), r.random_range(1..4), r.random_range(1..6));
    let x = random_tensor(r, &[n, c, 1, l], 2.0);
    let g = random_tensor(r, &[c], 1.0);
    let b = random_tensor(r, &[c], 1.0);
    let mean: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
    let var: Vec<f64> = (0..c).map(|_| r.random_range(0.5..2.0)).collect();
    let err = max_grad_error(&[x, g, b], &|t: &mut Tape, v: &[Var]| {
        let mode = if inference {
            sdmix::numerics::BatchNormMode::Inference {
                running_mean: &mean,
                running_var: &var,
            }
        } else {
            sdmix::numerics::BatchNormMode::Train
        };
        let (y, _) = t.batchnorm(v[0], v[1], v[2], mode, 1e-5)?;
        project(t, y, seed)
    });
    (format!("batchnorm({})", if inference { "inference" } else { "train" }), err)
}

/// Every primitive once, with shapes drawn from `seed`.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let r = &mut r;
    let mut out = Vec::new();

    let (n, cin, cout) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
    let k = r.random_range(1..5);
    let stride = r.random_range(1..3);
    let l = k + r.random_range(0..8);
    let inputs = [
        random_tensor(r, &[n, cin, 1, l], 1.0),
        random_tensor(r, &[cout, cin, 1, k], 1.0),
        random_tensor(r, &[cout], 1.0),
    ];
    let err = max_grad_error(&inputs, &|t: &mut Tape, v: &[Var]| {
        let y = t.conv_h1(v[0], v[1], v[2], stride)?;
        project(t, y, seed)
    });
    out.push(("conv_h1".to_string(), err));

    let width = r.random_range(1..4);
    let pstride = r.random_range(1..4);
    let l = width + r.random_range(0..8);
    let x = random_tensor(r, &[2, 2, 1, l], 1.0);
    let err = max_grad_error(&[x], &|t: &mut Tape, v: &[Var]| {
        let y = t.maxpool_h1(v[0], width, pstride)?;
        project(t, y, seed)
    });
    out.push(("maxpool_h1".to_string(), err));

    out.push(bn_case(r, seed, false));
    out.push(bn_case(r, seed, true));

    let x = random_tensor(r, &[3, 5], 1.0);
    let err = max_grad_error(&[x], &|t: &mut Tape, v: &[Var]| {
        let y = t.relu(v[0])?;
        project(t, y, seed)
    });
    out.push(("relu".to_string(), err));

    let (n, f, o) = (r.random_range(1..5), r.random_range(1..6), r.random_range(1..5));
    let inputs = [
        random_tensor(r, &[n, f], 1.0),
        random_tensor(r, &[o, f], 1.0),
        random_tensor(r, &[o], 1.0),
    ];
    let err = max_grad_error(&inputs, &|t: &mut Tape, v: &[Var]| {
        let y = t.linear(v[0], v[1], v[2])?;
        project(t, y, seed)
    });
    out.push(("linear".to_string(), err));

    let rows = r.random_range(1..5);
    let shape = [rows, 3];
    let ab = [random_tensor(r, &shape, 1.0), random_tensor(r, &shape, 1.0)];
    let s = r.random_range(-2.0..2.0);
    let lambdas: Vec<f64> = (0..rows).map(|_| r.random_range(0.0..1.0)).collect();
    let c = random_tensor(r, &shape, 1.0);
    let err = max_grad_error(&ab, &|t: &mut Tape, v: &[Var]| {
        let y = t.add(v[0], v[1])?;
        project(t, y, seed)
    });
    out.push(("add".to_string(), err));
    let err = max_grad_error(&ab, &|t: &mut Tape, v: &[Var]| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, seed)
    });
    out.push(("mul".to_string(), err));
    let err = max_grad_error(&ab, &|t: &mut Tape, v: &[Var]| {
        let y = t.scale(v[0], s)?;
        project(t, y, seed)
    });
    out.push(("scale".to_string(), err));
    let err = max_grad_error(&ab, &|t: &mut Tape, v: &[Var]| {
        let y = t.mix(v[0], v[1], &lambdas)?;
        project(t, y, seed)
    });
    out.push(("mix".to_string(), err));
    let err = max_grad_error(&ab, &|t: &mut Tape, v: &[Var]| {
        let y = t.mul_const(v[0], &c)?;
        let y = t.add_const(y, &c)?;
        let y = t.reshape(y, &[3 * rows])?;
        project(t, y, seed)
    });
    out.push(("mul_const/add_const/reshape".to_string(), err));
    let start = r.random_range(0..rows);
    let idx: Vec<usize> = (0..4).map(|_| r.random_range(0..3 * rows)).collect();
    let err = max_grad_error(&ab, &|t: &mut Tape, v: &[Var]| {
        let y = t.slice_rows(v[0], start, rows)?;
        let y = t.flatten(y)?;
        let g = t.gather(v[1], &idx)?;
        let a = project(t, y, seed)?;
        let b = project(t, g, seed + 1)?;
        t.add(a, b)
    });
    out.push(("slice_rows/flatten/gather".to_string(), err));
    let err = max_grad_error(&ab, &|t: &mut Tape, v: &[Var]| {
        let y = t.log_softmax(v[0])?;
        project(t, y, seed)
    });
    out.push(("log_softmax".to_string(), err));
    out
}

/// The full network with random geometry, in training or inference mode,
/// checked against every parameter tensor and the input batch.
pub fn network_case(seed: u64, train_mode: bool) -> GradCase {
    use sdmix::model::{ActivityNet, ArchSpec, BoundParams, Mode};
    let mut r = rng(seed);
    let k = r.random_range(2..4);
    let pool = r.random_range(1..3);
    let min_len = (k - 1) + pool * ((k - 1) + pool);
    let arch = ArchSpec {
        channels: r.random_range(1..3),
        window_len: min_len + r.random_range(0..6),
        kernel_width: k,
        channels_per_block: [r.random_range(2..4), r.random_range(2..4)],
        num_classes: r.random_range(2..4),
        pool_width: pool,
        ..ArchSpec::new(1, 1, 1, 2)
    };
    let mut net = ActivityNet::init(&arch, seed).unwrap();
    for b in net.blocks.iter_mut() {
        for v in b.running_var.iter_mut() {
            *v = r.random_range(0.5..2.0);
        }
        for m in b.running_mean.iter_mut() {
            *m = r.random_range(-0.5..0.5);
        }
    }
    let n = r.random_range(2..5);
    let mut inputs: Vec<Tensor> = net.params().iter().map(|p| (*p).clone()).collect();
    let [c, _, l] = arch.input_shape();
    inputs.push(random_tensor(&mut r, &[n, c, 1, l], 1.5));
    let mode = if train_mode { Mode::Train } else { Mode::Inference };
    let err = max_grad_error(&inputs, &|t: &mut Tape, v: &[Var]| {
        let params = BoundParams {
            vars: std::array::from_fn(|i| v[i]),
        };
        let (z, _) = net.forward_features(t, &params, v[ActivityNet::NUM_PARAMS], mode)?;
        let h = net.forward_classifier(t, &params, z)?;
        let lp = t.log_softmax(h)?;
        project(t, lp, seed)
    });
    let name = format!("activity_net({})", if train_mode { "train" } else { "inference" });
    (name, err)
}

/// `configs` random configurations, cycling through primitives and both
/// network modes.
pub fn gradient_sweep(configs: usize, base_seed: u64) -> Vec<GradCase> {
    let mut out = Vec::new();
    let mut s = base_seed;
    while out.len() < configs {
        out.extend(primitive_cases(s));
        out.push(network_case(s, true));
        out.push(network_case(s, false));
        s += 1;
    }
    out
}

/// A random affine classifier `h = Wx + b` with a query point and an
/// ordered class pair.
pub struct AffineInstance {
    pub w: Tensor,
    pub b: Vec<f64>,
    pub x: Vec<f64>,
    pub c: usize,
    pub y: usize,
}

pub fn affine_instance(seed: u64, dims: Option<usize>) -> AffineInstance {
    let mut r = rng(seed);
    let classes = r.random_range(2..6);
    let f = dims.unwrap_or_else(|| r.random_range(1..8));
    let w = random_tensor(&mut r, &[classes, f], 2.0);
    let b = (0..classes).map(|_| r.random_range(-1.0..1.0)).collect();
    let x = (0..f).map(|_| r.random_range(-1.0..1.0)).collect();
    let y = r.random_range(0..classes);
    let c = (y + r.random_range(1..classes)) % classes;
    AffineInstance { w, b, x, c, y }
}

impl AffineInstance {
    /// `(h_c − h_y) / ‖∇_x h_c − ∇_x h_y‖₂` with gradients from the tape.
    pub fn first_order_ratio(&self) -> f64 {
        let f = self.x.len();
        let k = self.b.len();
        let mut tape = Tape::new();
        let w = tape.constant(self.w.clone());
        let b = tape.constant(Tensor::from_vec(self.b.clone()));
        let x = tape.leaf(Tensor::new(vec![1, f], self.x.clone()).unwrap());
        let h = tape.linear(x, w, b).unwrap();
        let hc = tape.gather(h, &[self.c]).unwrap();
        let hy = tape.gather(h, &[self.y]).unwrap();
        let sc = tape.sum(hc).unwrap();
        let sy = tape.sum(hy).unwrap();
        let gc = tape.input_gradient(sc, x).unwrap();
        let gy = tape.input_gradient(sy, x).unwrap();
        let diff: Vec<f64> = gc.data().iter().zip(gy.data()).map(|(a, b)| a - b).collect();
        let hv = tape.value(h).unwrap().data();
        assert_eq!(hv.len(), k);
        (hv[self.c] - hv[self.y]) / sdmix::margin::lp_norm(&diff, 2.0)
    }

    /// Point-to-hyperplane distance computed directly from `W` and `b`.
    pub fn closed_form(&self) -> f64 {
        let f = self.x.len();
        let w = self.w.data();
        let d: Vec<f64> = (0..f).map(|i| w[self.c * f + i] - w[self.y * f + i]).collect();
        let gap: f64 = d.iter().zip(&self.x).map(|(a, b)| a * b).sum::<f64>() + self.b[self.c] - self.b[self.y];
        gap.abs() / d.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Brute-force distance to the `h_c = h_y` line for 2-D inputs: the
    /// nearest grid point (spacing `res`, half-width `half`) at which the
    /// sign of `h_c − h_y` changes towards a neighbour, searched within the
    /// disc of radius `half`. `None` when the line misses the disc.
    pub fn grid_distance(&self, res: f64, half: f64) -> Option<f64> {
        assert_eq!(self.x.len(), 2);
        let w = self.w.data();
        let a0 = w[self.c * 2] - w[self.y * 2];
        let a1 = w[self.c * 2 + 1] - w[self.y * 2 + 1];
        let beta = self.b[self.c] - self.b[self.y];
        let n = (2.0 * half / res).round() as usize + 1;
        let coord = |i: usize, o: f64| o - half + i as f64 * res;
        let g = |u: f64, v: f64| a0 * u + a1 * v + beta;
        let mut best: Option<f64> = None;
        for i in 0..n {
            let u = coord(i, self.x[0]);
            let mut prev = g(u, coord(0, self.x[1]));
            for j in 0..n {
                let v = coord(j, self.x[1]);
                let here = g(u, v);
                let right = g(u + res, v);
                let changes = (here <= 0.0) != (prev <= 0.0) || (here <= 0.0) != (right <= 0.0);
                prev = here;
                if changes {
                    let d = ((u - self.x[0]).powi(2) + (v - self.x[1]).powi(2)).sqrt();
                    if d > half {
                        continue;
                    }
                    best = Some(best.map_or(d, |b: f64| b.min(d)));
                }
            }
        }
        best
    }
}

/// Small network settings for fast training tests.
pub fn quick_config(algorithm: sdmix::training::Algorithm) -> sdmix::training::TrainConfig {
    let mut c = sdmix::training::TrainConfig {
        algorithm,
        batch_per_domain: 8,
        max_epochs: 3,
        ..Default::default()
    };
    c.model.kernel_width = 3;
    c.model.channels_per_block = [4, 8];
    c
}

/// Per-step losses of `steps` paired updates with a locked constant-range
/// profile over every (domain, class) cell.
pub fn locked_profile_losses(
    algorithm: sdmix::training::Algorithm,
    domains: &[DomainDataset],
    steps: usize,
    seed: u64,
) -> Vec<f64> {
    use sdmix::model::ActivityNet;
    use sdmix::semantics::SemanticProfile;
    use sdmix::training::{make_paired_batch, train_step, TrainState};

    let config = quick_config(algorithm);
    let shape = domains[0].windows[0].x.shape().to_vec();
    let net = ActivityNet::init(&config.arch(shape[0], shape[2], 2), seed).unwrap();
    let cells: Vec<(usize, usize)> = domains
        .iter()
        .flat_map(|d| d.by_class().into_keys().map(move |c| (d.domain_id, c)))
        .collect();
    let mut state = TrainState::new(net, seed);
    state.profile = Some(SemanticProfile::constant(&cells, 1.7, config.mix_space));
    state.lock_profile = true;
    (0..steps)
        .map(|_| {
            let batch = make_paired_batch(domains, config.batch_per_domain, &mut state.rng).unwrap();
            train_step(&mut state, domains, &batch, &config).unwrap().loss
        })
        .collect()
}

/// Algorithms compared by the synthetic benchmark, in result order.
pub const BENCHMARK_ALGORITHMS: [sdmix::training::Algorithm; 3] = [
    sdmix::training::Algorithm::DeepAll,
    sdmix::training::Algorithm::VanillaMixup,
    sdmix::training::Algorithm::SdmixFull,
];

/// Held-out accuracies of [`BENCHMARK_ALGORITHMS`] on domain 3 of the
/// benchmark generator, trained on domains 0–2 for 30 epochs.
pub fn benchmark_accuracies(seed: u64) -> [f64; 3] {
    use sdmix::training::{fit, TrainConfig};
    let domains = generate_synthetic(&benchmark_spec(), seed).unwrap();
    BENCHMARK_ALGORITHMS.map(|algorithm| {
        let mut config = TrainConfig {
            algorithm,
            max_epochs: 30,
            seed,
            ..Default::default()
        };
        config.margin.gamma = 2.0;
        let out = fit(&config, &domains, Some(3)).unwrap();
        sdmix::metrics::evaluate(&out.best_net, &domains[3].windows)
            .unwrap()
            .metrics
            .accuracy
    })
}
