//! Sensor series ingestion, sliding-window segmentation, per-domain
//! train/validation splitting and the synthetic multi-domain generator.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// A continuous multichannel recording from one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorSeries {
    pub channels: usize,
    /// Row-major `timesteps × channels`.
    pub values: Vec<f64>,
    pub labels: Vec<usize>,
    pub domain_id: usize,
    pub sample_rate_hz: Option<f64>,
}

impl SensorSeries {
    pub fn new(channels: usize, values: Vec<f64>, labels: Vec<usize>, domain_id: usize) -> Result<Self> {
        if channels == 0 || values.len() != labels.len() * channels {
            return Err(Error::Data(format!(
                "series has {} values for {} labels × {channels} channels",
                values.len(),
                labels.len()
            )));
        }
        Ok(Self {
            channels,
            values,
            labels,
            domain_id,
            sample_rate_hz: None,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.labels.len()
    }

    pub fn value(&self, t: usize, ch: usize) -> f64 {
        self.values[t * self.channels + ch]
    }
}

/// One classification input shaped `(channels, 1, window_len)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorWindow {
    pub x: Tensor,
    pub y: usize,
    pub domain: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain_id: usize,
    pub windows: Vec<SensorWindow>,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Window indices grouped by class.
    pub fn by_class(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, w) in self.windows.iter().enumerate() {
            out.entry(w.y).or_default().push(i);
        }
        out
    }
}

/// Stacks windows into an `(N, channels, 1, window_len)` batch.
pub fn stack_windows<'a, I>(windows: I) -> Result<Tensor>
where
    I: IntoIterator<Item = &'a SensorWindow>,
{
    let parts: Vec<Tensor> = windows.into_iter().map(|w| w.x.unsqueeze0()).collect();
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::stack_rows(&refs)
}

/// Window stride for a given overlap fraction (at least one step).
pub fn window_stride(window_len: usize, overlap: f64) -> usize {
    ((window_len as f64 * (1.0 - overlap)).round() as usize).max(1)
}

/// Segments a series into fixed-length windows. Windows spanning a label
/// change are dropped.
pub fn sliding_windows(series: &SensorSeries, window_len: usize, overlap: f64) -> Result<Vec<SensorWindow>> {
    if window_len == 0 || !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!(
            "window_len {window_len}, overlap {overlap}"
        )));
    }
    let n = series.timesteps();
    if window_len > n {
        log::warn!(
            "domain {}: window length {window_len} exceeds {n} timesteps; no windows",
            series.domain_id
        );
        return Ok(Vec::new());
    }
    let stride = window_stride(window_len, overlap);
    let count = (n - window_len) / stride + 1;
    let ch = series.channels;
    let mut out = Vec::new();
    for k in 0..count {
        let start = k * stride;
        let labels = &series.labels[start..start + window_len];
        if labels.iter().any(|&l| l != labels[0]) {
            continue;
        }
        let mut data = Vec::with_capacity(ch * window_len);
        for c in 0..ch {
            data.extend((start..start + window_len).map(|t| series.value(t, c)));
        }
        out.push(SensorWindow {
            x: Tensor::new(vec![ch, 1, window_len], data)?,
            y: labels[0],
            domain: series.domain_id,
        });
    }
    Ok(out)
}

/// Reads `domain,label,ch0,ch1,…` rows, one per timestep.
pub fn load_domain_csv(path: &Path) -> Result<SensorSeries> {
    let name = path.display().to_string();
    let err = |line: usize, msg: String| Error::Csv {
        path: name.clone(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(0, e.to_string()))?;
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "domain" || &header[1] != "label" {
        return Err(err(1, "header must be domain,label,ch0,…".into()));
    }
    let channels = header.len() - 2;
    let mut domain = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        if rec.len() != channels + 2 {
            return Err(err(line, format!("expected {} fields, found {}", channels + 2, rec.len())));
        }
        let d: usize = rec[0]
            .parse()
            .map_err(|_| err(line, format!("domain {:?} is not an integer", &rec[0])))?;
        match domain {
            None => domain = Some(d),
            Some(prev) if prev != d => {
                return Err(err(line, format!("mixed domain ids {prev} and {d}")));
            }
            _ => {}
        }
        labels.push(
            rec[1]
                .parse()
                .map_err(|_| err(line, format!("label {:?} is not a class index", &rec[1])))?,
        );
        for (c, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| err(line, format!("ch{c} value {field:?} is not numeric")))?;
            if !v.is_finite() {
                return Err(err(line, format!("ch{c} value {field:?} is not finite")));
            }
            values.push(v);
        }
    }
    SensorSeries::new(channels, values, labels, domain.unwrap_or(0))
}

pub fn write_domain_csv(series: &SensorSeries, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    let mut header = vec!["domain".to_string(), "label".to_string()];
    header.extend((0..series.channels).map(|c| format!("ch{c}")));
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for t in 0..series.timesteps() {
        let mut row = vec![series.domain_id.to_string(), series.labels[t].to_string()];
        row.extend((0..series.channels).map(|c| series.value(t, c).to_string()));
        w.write_record(&row).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Lays windows end to end as a series; reloading with zero overlap and the
/// same window length reproduces the windows.
pub fn windows_to_series(ds: &DomainDataset) -> Result<SensorSeries> {
    let first = ds
        .windows
        .first()
        .ok_or_else(|| Error::Data(format!("domain {} has no windows", ds.domain_id)))?;
    let ch = first.x.shape()[0];
    let len = first.x.shape()[2];
    let mut values = Vec::with_capacity(ds.len() * ch * len);
    let mut labels = Vec::with_capacity(ds.len() * len);
    for w in &ds.windows {
        for t in 0..len {
            values.extend((0..ch).map(|c| w.x.data()[c * len + t]));
            labels.push(w.y);
        }
    }
    SensorSeries::new(ch, values, labels, ds.domain_id)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

fn take_split(indices: &mut Vec<usize>, fraction: f64, rng: &mut rng::Rng) -> (Vec<usize>, Vec<usize>) {
    indices.shuffle(rng);
    let n = indices.len();
    let n_train = ((n as f64 * fraction).round() as usize).clamp(1.min(n), n);
    let val = indices.split_off(n_train);
    (std::mem::take(indices), val)
}

/// Deterministic train/validation partition of one domain.
pub fn train_val_split(ds: &DomainDataset, spec: &SplitSpec) -> Result<(DomainDataset, DomainDataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let mut rng = rng::stream(
        spec.seed ^ (ds.domain_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        rng::STREAM_SPLIT,
    );
    let mut train = Vec::new();
    let mut val = Vec::new();
    if spec.stratified {
        for (class, mut idx) in ds.by_class() {
            if idx.len() == 1 {
                log::warn!(
                    "domain {} class {class}: single window goes to the training split",
                    ds.domain_id
                );
            }
            let (t, v) = take_split(&mut idx, spec.train_fraction, &mut rng);
            train.extend(t);
            val.extend(v);
        }
    } else {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        let (t, v) = take_split(&mut idx, spec.train_fraction, &mut rng);
        train = t;
        val = v;
    }
    train.sort_unstable();
    val.sort_unstable();
    let pick = |idx: &[usize]| DomainDataset {
        domain_id: ds.domain_id,
        windows: idx.iter().map(|&i| ds.windows[i].clone()).collect(),
    };
    Ok((pick(&train), pick(&val)))
}

/// Knobs for the synthetic multi-domain generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_domains: usize,
    pub num_classes: usize,
    pub channels: usize,
    pub window_len: usize,
    pub windows_per_class: usize,
    /// Base noise standard deviation.
    pub noise_sigma: f64,
    /// Per-class multiplier on the noise scale (semantic inconsistency).
    pub sigma_multipliers: Vec<f64>,
    /// Scale of the class-specific waveform (class proximity); zero makes
    /// every class mean coincide.
    pub separation: f64,
    /// Log-scale spread of per-domain amplitude.
    pub amplitude_spread: f64,
    /// Spread of the per-domain additive offset.
    pub offset_spread: f64,
    /// Standard deviation of per-window phase jitter, radians.
    pub phase_jitter: f64,
    /// Log-scale spread of per-domain noise.
    pub domain_noise_spread: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_domains: 4,
            num_classes: 2,
            channels: 2,
            window_len: 32,
            windows_per_class: 60,
            noise_sigma: 0.5,
            sigma_multipliers: vec![1.0, 4.0],
            separation: 1.0,
            amplitude_spread: 0.3,
            offset_spread: 0.3,
            phase_jitter: 0.3,
            domain_noise_spread: 0.3,
        }
    }
}

/// Generator parameters for one (domain, class) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    /// Waveform family index; the class index.
    pub waveform: usize,
    pub amplitude: f64,
    pub offset: f64,
    pub phase_jitter: f64,
    pub sigma: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic: {m}")));
        if self.num_domains == 0 || self.num_classes < 2 || self.channels == 0 {
            return bad("need ≥1 domain, ≥2 classes and ≥1 channel".into());
        }
        if self.window_len == 0 || self.windows_per_class == 0 {
            return bad("window_len and windows_per_class must be positive".into());
        }
        if self.sigma_multipliers.len() != self.num_classes {
            return bad(format!(
                "{} sigma multipliers for {} classes",
                self.sigma_multipliers.len(),
                self.num_classes
            ));
        }
        let scales = [self.noise_sigma]
            .into_iter()
            .chain(self.sigma_multipliers.iter().copied());
        if scales.into_iter().any(|s| !(s > 0.0)) {
            return bad("noise scales must be positive".into());
        }
        let spreads = [
            self.separation,
            self.amplitude_spread,
            self.offset_spread,
            self.phase_jitter,
            self.domain_noise_spread,
        ];
        if spreads.iter().any(|s| !(*s >= 0.0)) {
            return bad("separation and spreads must be nonnegative".into());
        }
        Ok(())
    }

    /// Per-(domain, class) parameters derived from `seed`.
    pub fn cell_params(&self, seed: u64) -> Vec<Vec<CellParams>> {
        let mut rng = rng::stream(seed, rng::STREAM_SYNTH);
        (0..self.num_domains)
            .map(|_| {
                let amp = (self.amplitude_spread * rng.random_range(-1.0..=1.0)).exp();
                let offset = self.offset_spread * rng.random_range(-1.0..=1.0);
                let noise = (self.domain_noise_spread * rng.random_range(-1.0..=1.0)).exp();
                (0..self.num_classes)
                    .map(|c| CellParams {
                        waveform: c,
                        amplitude: amp,
                        offset,
                        phase_jitter: self.phase_jitter,
                        sigma: self.noise_sigma * self.sigma_multipliers[c] * noise,
                    })
                    .collect()
            })
            .collect()
    }
}

/// Class waveform before domain scaling: a class-specific constant level
/// plus a sinusoid of class-specific frequency.
fn waveform(class: usize, num_classes: usize, channel: usize, t: usize, len: usize, phase: f64) -> f64 {
    let level = class as f64 - (num_classes as f64 - 1.0) / 2.0;
    let freq = (class + 1) as f64;
    let arg = 2.0 * std::f64::consts::PI * freq * t as f64 / len as f64 + phase + 0.5 * channel as f64;
    level + arg.sin()
}

/// Builds `num_domains` datasets of `windows_per_class` windows per class.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<DomainDataset>> {
    spec.validate()?;
    let cells = spec.cell_params(seed);
    let mut rng = rng::stream(seed.wrapping_add(1), rng::STREAM_SYNTH);
    let (ch, len) = (spec.channels, spec.window_len);
    let mut out = Vec::with_capacity(spec.num_domains);
    for (d, row) in cells.iter().enumerate() {
        let mut windows = Vec::with_capacity(spec.num_classes * spec.windows_per_class);
        for (c, p) in row.iter().enumerate() {
            for _ in 0..spec.windows_per_class {
                let z: f64 = StandardNormal.sample(&mut rng);
                let phase = p.phase_jitter * z;
                let mut data = Vec::with_capacity(ch * len);
                for k in 0..ch {
                    for t in 0..len {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        let signal = spec.separation * waveform(p.waveform, spec.num_classes, k, t, len, phase);
                        data.push(p.amplitude * signal + p.offset + p.sigma * noise);
                    }
                }
                windows.push(SensorWindow {
                    x: Tensor::new(vec![ch, 1, len], data)?,
                    y: c,
                    domain: d,
                });
            }
        }
        out.push(DomainDataset {
            domain_id: d,
            windows,
        });
    }
    Ok(out)
}
