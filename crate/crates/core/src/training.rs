//! Mini-batch optimization over paired source domains.
//!
//! Every step draws two distinct source domains, samples a batch from each,
//! pairs the samples index-wise and trains on the interpolations only. The
//! ERM baseline (`deepall`) instead trains on both halves of the batch
//! unmixed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::{stack_windows, train_val_split, DomainDataset, SensorWindow, SplitSpec};
use crate::error::{Error, Result};
use crate::margin::{
    classifier_denominators, margin_loss_on_tape, mixed_terms, softmax_rows, count_noisy_probs,
    InputDenominators, MarginConfig, MarginTerm,
};
use crate::metrics;
use crate::model::{ActivityNet, ArchSpec, BoundParams, Mode};
use crate::numerics::{BatchStats, Tape, Tensor, Var};
use crate::rng::{self, Rng};
use crate::semantics::{
    refresh_profile, sample_lambda, Metric, MixSpace, ProfileSettings, RangeVariant,
    SemanticProfile,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    DeepAll,
    VanillaMixup,
    SdmixSemanticOnly,
    SdmixMarginOnly,
    SdmixFull,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::DeepAll,
        Algorithm::VanillaMixup,
        Algorithm::SdmixSemanticOnly,
        Algorithm::SdmixMarginOnly,
        Algorithm::SdmixFull,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::DeepAll => "deepall",
            Algorithm::VanillaMixup => "vanilla_mixup",
            Algorithm::SdmixSemanticOnly => "sdmix_semantic_only",
            Algorithm::SdmixMarginOnly => "sdmix_margin_only",
            Algorithm::SdmixFull => "sdmix_full",
        }
    }

    pub fn mixes(&self) -> bool {
        *self != Algorithm::DeepAll
    }

    /// Label weights come from semantic ranges rather than λ.
    pub fn uses_semantics(&self) -> bool {
        matches!(self, Algorithm::SdmixSemanticOnly | Algorithm::SdmixFull)
    }

    pub fn uses_margin(&self) -> bool {
        matches!(self, Algorithm::SdmixMarginOnly | Algorithm::SdmixFull)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                format!("one of {}", names.join("|"))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kernel_width: usize,
    pub channels_per_block: [usize; 2],
    pub pool_width: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Class count; inferred from the source domains when absent.
    pub num_classes: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kernel_width: 6,
            channels_per_block: [16, 32],
            pool_width: 2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            num_classes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub margin: MarginConfig,
    pub mix_space: MixSpace,
    pub range_metric: Metric,
    pub range_variant: RangeVariant,
    /// Steps between profile refreshes; 0 refreshes once per epoch.
    pub refresh_every_steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_per_domain: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub split: SplitSpec,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::SdmixFull,
            alpha: 0.2,
            margin: MarginConfig::default(),
            mix_space: MixSpace::Feature,
            range_metric: Metric::L2,
            range_variant: RangeVariant::Mean,
            refresh_every_steps: 0,
            learning_rate: 1e-2,
            weight_decay: 5e-4,
            batch_per_domain: 32,
            max_epochs: 150,
            seed: 0,
            split: SplitSpec::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn profile_settings(&self) -> ProfileSettings {
        ProfileSettings {
            space: self.mix_space,
            metric: self.range_metric,
            variant: self.range_variant,
        }
    }

    pub fn arch(&self, channels: usize, window_len: usize, num_classes: usize) -> ArchSpec {
        ArchSpec {
            channels,
            window_len,
            kernel_width: self.model.kernel_width,
            channels_per_block: self.model.channels_per_block,
            num_classes,
            pool_width: self.model.pool_width,
            bn_eps: self.model.bn_eps,
            bn_momentum: self.model.bn_momentum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.algorithm.mixes() && !(self.alpha > 0.0) {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate must be positive, weight_decay nonnegative".into());
        }
        if self.batch_per_domain == 0 {
            return bad("batch_per_domain must be positive".into());
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.split.train_fraction));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Self {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step with decoupled weight decay:
/// `p ← p − lr·wd·p − lr·m̂ / (√v̂ + eps)`.
pub fn adam_update(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState, lr: f64, wd: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * gv;
            v[i] = b2 * v[i] + (1.0 - b2) * gv * gv;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            *pv -= lr * wd * *pv + lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
}

/// Index-wise pairs between two source domains.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedBatch {
    /// Positions in the training-domain list, not domain ids.
    pub domains: (usize, usize),
    pub pairs: Vec<(usize, usize)>,
}

fn draw_indices(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    if n >= k {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        idx.truncate(k);
        idx
    } else {
        (0..k).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Draws two distinct domains uniformly and `batch_per_domain` windows from
/// each (with replacement only when a split is smaller than the batch).
/// With a single domain both halves come from it.
pub fn make_paired_batch(train: &[DomainDataset], batch_per_domain: usize, rng: &mut Rng) -> Result<PairedBatch> {
    if train.is_empty() || train.iter().any(|d| d.is_empty()) {
        return Err(Error::Data("paired batches need nonempty training splits".into()));
    }
    let n = train.len();
    let (a, b) = if n == 1 {
        (0, 0)
    } else {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        (a, b)
    };
    let ia = draw_indices(train[a].len(), batch_per_domain, rng);
    let ib = draw_indices(train[b].len(), batch_per_domain, rng);
    Ok(PairedBatch {
        domains: (a, b),
        pairs: ia.into_iter().zip(ib).collect(),
    })
}

/// Everything one step needs after randomness has been drawn.
#[derive(Clone, Debug)]
pub struct StepInputs {
    pub xa: Tensor,
    pub xb: Tensor,
    pub ya: Vec<usize>,
    pub yb: Vec<usize>,
    pub domain_a: usize,
    pub domain_b: usize,
    pub lambdas: Vec<f64>,
    /// Label weight on the first element of each pair.
    pub t: Vec<f64>,
    pub degenerate_t: usize,
}

impl StepInputs {
    pub fn len(&self) -> usize {
        self.ya.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ya.is_empty()
    }
}

/// Draws λ for every pair and resolves label weights.
pub fn prepare_step(
    train: &[DomainDataset],
    batch: &PairedBatch,
    config: &TrainConfig,
    profile: Option<&SemanticProfile>,
    rng: &mut Rng,
) -> Result<StepInputs> {
    let (da, db) = (&train[batch.domains.0], &train[batch.domains.1]);
    let wa: Vec<&SensorWindow> = batch.pairs.iter().map(|p| &da.windows[p.0]).collect();
    let wb: Vec<&SensorWindow> = batch.pairs.iter().map(|p| &db.windows[p.1]).collect();
    let ya: Vec<usize> = wa.iter().map(|w| w.y).collect();
    let yb: Vec<usize> = wb.iter().map(|w| w.y).collect();
    let mut lambdas = Vec::new();
    let mut t = Vec::new();
    let mut degenerate_t = 0;
    if config.algorithm.mixes() {
        for k in 0..ya.len() {
            let l = sample_lambda(config.alpha, rng)?;
            let weight = match (config.algorithm.uses_semantics(), profile) {
                (true, Some(p)) => match p.label_weight(l, (da.domain_id, ya[k]), (db.domain_id, yb[k])) {
                    Ok(w) => {
                        degenerate_t += usize::from(w.degenerate);
                        w.t
                    }
                    Err(Error::MissingProfile { .. }) => {
                        degenerate_t += 1;
                        l
                    }
                    Err(e) => return Err(e),
                },
                (true, None) => {
                    degenerate_t += 1;
                    l
                }
                (false, _) => l,
            };
            lambdas.push(l);
            t.push(weight);
        }
    }
    Ok(StepInputs {
        xa: stack_windows(wa.iter().copied())?,
        xb: stack_windows(wb.iter().copied())?,
        ya,
        yb,
        domain_a: da.domain_id,
        domain_b: db.domain_id,
        lambdas,
        t,
        degenerate_t,
    })
}

/// Recorded loss of one step.
pub struct LossGraph {
    pub loss: Var,
    pub logits: Var,
    /// The tensor that was mixed: inputs or features of both batch halves.
    pub pre_mix: Option<(Var, Var)>,
    pub mixed: Option<Var>,
    pub stats: Vec<BatchStats>,
    pub floor_hits: usize,
}

fn soft_targets(ya: &[usize], yb: &[usize], t: &[f64], c: usize) -> Tensor {
    let mut targets = Tensor::zeros(&[ya.len(), c]);
    let d = targets.data_mut();
    for k in 0..ya.len() {
        d[k * c + ya[k]] += t[k];
        d[k * c + yb[k]] += 1.0 - t[k];
    }
    targets
}

fn cross_entropy(tape: &mut Tape, logits: Var, targets: &Tensor) -> Result<Var> {
    let n = targets.shape()[0] as f64;
    let logp = tape.log_softmax(logits)?;
    let weighted = tape.mul_const(logp, targets)?;
    let total = tape.sum(weighted)?;
    tape.scale(total, -1.0 / n)
}

fn put_input(tape: &mut Tape, t: &Tensor, leaf: bool) -> Var {
    if leaf {
        tape.leaf(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

/// Builds the algorithm's batch loss. With `leaf_inputs` the raw batch
/// halves are differentiable leaves, which lets callers confirm that they
/// reach the loss only through the mix.
pub fn build_loss(
    tape: &mut Tape,
    net: &ActivityNet,
    params: &BoundParams,
    inputs: &StepInputs,
    config: &TrainConfig,
    leaf_inputs: bool,
) -> Result<LossGraph> {
    let c = net.num_classes();
    let b = inputs.len();

    if !config.algorithm.mixes() {
        let both = Tensor::stack_rows(&[&inputs.xa, &inputs.xb])?;
        let x = tape.constant(both);
        let (z, stats) = net.forward_features(tape, params, x, Mode::Train)?;
        let logits = net.forward_classifier(tape, params, z)?;
        let mut labels = inputs.ya.clone();
        labels.extend(&inputs.yb);
        let ones = vec![1.0; labels.len()];
        let loss = cross_entropy(tape, logits, &soft_targets(&labels, &labels, &ones, c))?;
        return Ok(LossGraph {
            loss,
            logits,
            pre_mix: None,
            mixed: None,
            stats,
            floor_hits: 0,
        });
    }

    let (pre_mix, mixed, logits, stats) = match config.mix_space {
        MixSpace::Input => {
            let xa = put_input(tape, &inputs.xa, leaf_inputs);
            let xb = put_input(tape, &inputs.xb, leaf_inputs);
            let mixed = tape.mix(xa, xb, &inputs.lambdas)?;
            let (z, stats) = net.forward_features(tape, params, mixed, Mode::Train)?;
            let logits = net.forward_classifier(tape, params, z)?;
            ((xa, xb), mixed, logits, stats)
        }
        MixSpace::Feature => {
            let both = Tensor::stack_rows(&[&inputs.xa, &inputs.xb])?;
            let x = put_input(tape, &both, leaf_inputs);
            let (z, stats) = net.forward_features(tape, params, x, Mode::Train)?;
            let za = tape.slice_rows(z, 0, b)?;
            let zb = tape.slice_rows(z, b, 2 * b)?;
            let mixed = tape.mix(za, zb, &inputs.lambdas)?;
            let logits = net.forward_classifier(tape, params, mixed)?;
            ((za, zb), mixed, logits, stats)
        }
    };

    let mut floor_hits = 0;
    let loss = if config.algorithm.uses_margin() {
        let terms: Vec<MarginTerm> = (0..b)
            .flat_map(|k| mixed_terms(k, inputs.ya[k], inputs.yb[k], inputs.t[k]))
            .collect();
        let q = config.margin.q();
        let total = match config.mix_space {
            MixSpace::Feature => {
                let dens = classifier_denominators(&net.fc_w, q);
                margin_loss_on_tape(tape, logits, &terms, &|_, y, k| dens[k * c + y], &config.margin, &mut floor_hits)?
            }
            MixSpace::Input => {
                let x_tilde = tape.value(mixed)?.clone();
                let dens = InputDenominators::new(net, &x_tilde, q)?;
                margin_loss_on_tape(tape, logits, &terms, &|r, y, k| dens.get(r, y, k), &config.margin, &mut floor_hits)?
            }
        };
        tape.scale(total, 1.0 / b as f64)?
    } else {
        cross_entropy(tape, logits, &soft_targets(&inputs.ya, &inputs.yb, &inputs.t, c))?
    };
    Ok(LossGraph {
        loss,
        logits,
        pre_mix: Some(pre_mix),
        mixed: Some(mixed),
        stats,
        floor_hits,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub degenerate_t: usize,
    pub floor_hits: usize,
    pub virtual_noisy: usize,
}

impl Diagnostics {
    fn add(&mut self, o: &Diagnostics) {
        self.degenerate_t += o.degenerate_t;
        self.floor_hits += o.floor_hits;
        self.virtual_noisy += o.virtual_noisy;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestModel {
    pub val_accuracy: f64,
    pub epoch: usize,
    pub net: ActivityNet,
}

/// Mutable training state; the rng advances deterministically.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub net: ActivityNet,
    pub adam: AdamState,
    pub step: usize,
    pub profile: Option<SemanticProfile>,
    /// Keep `profile` fixed instead of refreshing it.
    pub lock_profile: bool,
    pub rng: Rng,
    pub best: Option<BestModel>,
}

impl TrainState {
    pub fn new(net: ActivityNet, seed: u64) -> Self {
        let shapes: Vec<&[usize]> = net.params().iter().map(|p| p.shape()).collect();
        let adam = AdamState::new(&shapes);
        Self {
            net,
            adam,
            step: 0,
            profile: None,
            lock_profile: false,
            rng: rng::stream(seed, rng::STREAM_TRAIN),
            best: None,
        }
    }
}

/// Loss, backward pass and one Adam update on prepared inputs.
pub fn apply_step(state: &mut TrainState, inputs: &StepInputs, config: &TrainConfig) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let params = state.net.bind(&mut tape, true);
    let graph = build_loss(&mut tape, &state.net, &params, inputs, config, false)?;
    let loss = tape.value(graph.loss)?.item()?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            step: state.step,
            config: format!("{config:?}"),
        });
    }
    let mut diagnostics = Diagnostics {
        degenerate_t: inputs.degenerate_t,
        floor_hits: graph.floor_hits,
        virtual_noisy: 0,
    };
    if config.algorithm.mixes() {
        let probs = softmax_rows(tape.value(graph.logits)?);
        let labels: Vec<_> = (0..inputs.len())
            .map(|k| (inputs.ya[k], inputs.yb[k], inputs.t[k]))
            .collect();
        diagnostics.virtual_noisy = count_noisy_probs(&probs, &labels, config.margin.epsilon_noisy);
    }
    let grads = tape.backward(graph.loss)?;
    let grad_refs: Vec<&Tensor> = params
        .vars
        .iter()
        .map(|v| grads.get(*v).ok_or(Error::Detached))
        .collect::<Result<_>>()?;
    state.net.absorb_stats(&graph.stats);
    let mut p = state.net.params_mut();
    adam_update(&mut p, &grad_refs, &mut state.adam, config.learning_rate, config.weight_decay);
    state.step += 1;
    Ok(StepOutcome { loss, diagnostics })
}

/// Draws λ, mixes, and applies one update for a paired batch.
pub fn train_step(
    state: &mut TrainState,
    train: &[DomainDataset],
    batch: &PairedBatch,
    config: &TrainConfig,
) -> Result<StepOutcome> {
    let inputs = prepare_step(train, batch, config, state.profile.as_ref(), &mut state.rng)?;
    apply_step(state, &inputs, config)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub best_net: ActivityNet,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub diagnostics: Diagnostics,
    /// Domain ids whose windows were read during fitting.
    pub touched_domains: BTreeSet<usize>,
    pub final_profile: Option<SemanticProfile>,
}

/// Trains on every domain except `holdout` and keeps the parameters with
/// the best pooled source-validation accuracy.
pub fn fit(config: &TrainConfig, domains: &[DomainDataset], holdout: Option<usize>) -> Result<FitOutcome> {
    config.validate()?;
    let sources: Vec<&DomainDataset> = domains
        .iter()
        .filter(|d| Some(d.domain_id) != holdout && !d.is_empty())
        .collect();
    if sources.is_empty() {
        return Err(Error::Data("no source domains to train on".into()));
    }
    let mut touched = BTreeSet::new();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for d in &sources {
        touched.insert(d.domain_id);
        let split = SplitSpec {
            seed: config.split.seed ^ config.seed,
            ..config.split.clone()
        };
        let (t, v) = train_val_split(d, &split)?;
        train.push(t);
        val.extend(v.windows);
    }
    let shape = sources[0].windows[0].x.shape().to_vec();
    let inferred = sources
        .iter()
        .flat_map(|d| d.windows.iter().map(|w| w.y))
        .max()
        .unwrap_or(0)
        + 1;
    let num_classes = config.model.num_classes.unwrap_or(inferred);
    let arch = config.arch(shape[0], shape[2], num_classes);
    config.margin.validate(num_classes)?;
    let net = ActivityNet::init(&arch, config.seed)?;
    let val_windows = if val.is_empty() {
        log::warn!("no validation windows; selecting on training accuracy");
        train.iter().flat_map(|d| d.windows.iter().cloned()).collect()
    } else {
        val
    };

    if train.len() == 1 && config.algorithm.mixes() {
        log::warn!("single source domain: pairs are drawn within domain {}", train[0].domain_id);
    }
    let mut state = TrainState::new(net, config.seed);
    let steps_per_epoch = train
        .iter()
        .map(|d| d.len())
        .max()
        .unwrap_or(0)
        .div_ceil(config.batch_per_domain);
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut total = Diagnostics::default();
    let needs_profile = config.algorithm.uses_semantics();

    for epoch in 0..config.max_epochs {
        let mut loss_sum = 0.0;
        let mut diag = Diagnostics::default();
        for s in 0..steps_per_epoch {
            let refresh = if config.refresh_every_steps == 0 {
                s == 0
            } else {
                state.step.is_multiple_of(config.refresh_every_steps)
            };
            if needs_profile && refresh && !state.lock_profile {
                state.profile = Some(refresh_profile(&state.net, &train, config.profile_settings(), epoch)?);
            }
            let batch = make_paired_batch(&train, config.batch_per_domain, &mut state.rng)?;
            let out = train_step(&mut state, &train, &batch, config)?;
            loss_sum += out.loss;
            diag.add(&out.diagnostics);
        }
        let val_accuracy = metrics::evaluate(&state.net, &val_windows)?.metrics.accuracy;
        if state.best.as_ref().is_none_or(|b| val_accuracy > b.val_accuracy) {
            state.best = Some(BestModel {
                val_accuracy,
                epoch,
                net: state.net.clone(),
            });
        }
        total.add(&diag);
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / steps_per_epoch.max(1) as f64,
            val_accuracy,
            diagnostics: diag,
        });
    }

    let (best_net, best_epoch, best_val_accuracy) = match state.best {
        Some(b) => (b.net, Some(b.epoch), Some(b.val_accuracy)),
        None => (state.net, None, None),
    };
    Ok(FitOutcome {
        best_net,
        best_epoch,
        best_val_accuracy,
        history,
        diagnostics: total,
        touched_domains: touched,
        final_profile: state.profile,
    })
}

/// `epoch,train_loss,val_accuracy,degenerate_t,denom_floor,virtual_noisy`.
pub fn write_history_csv<W: std::io::Write>(history: &[EpochRecord], mut w: W) -> Result<()> {
    writeln!(w, "epoch,train_loss,val_accuracy,degenerate_t,denom_floor,virtual_noisy")?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch,
            r.train_loss,
            r.val_accuracy,
            r.diagnostics.degenerate_t,
            r.diagnostics.floor_hits,
            r.diagnostics.virtual_noisy
        )?;
    }
    Ok(())
}
