//! INI experiment configuration.
//!
//! Sections are `[data]`, `[model]`, `[train]`, `[margin]`, `[synthetic]`
//! and `[toy]`. Omitted keys take their defaults; unknown keys are
//! rejected. [`ExperimentConfig::to_ini`] echoes the fully resolved
//! configuration, and parsing that echo yields an equal value.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::{Ini, ParseOption, Properties};

use crate::data::{SplitSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::experiment::ToySpec;
use crate::margin::MarginConfig;
use crate::training::{Algorithm, ModelConfig, TrainConfig};

const SECTIONS: [&str; 6] = ["data", "model", "train", "margin", "synthetic", "toy"];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Generated domains; `seed` drives the generator only.
    Synthetic { spec: SyntheticSpec, seed: u64 },
    /// One CSV file per domain.
    Csv {
        files: Vec<PathBuf>,
        window_len: usize,
        overlap: f64,
    },
}

/// Hyperparameter grids expanded by `sweep`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub top_c: Vec<usize>,
    pub gamma: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            alpha: vec![0.1, 0.2, 0.5, 1.0, 10.0],
            top_c: vec![1, 2, 5],
            gamma: vec![10.0, 100.0, 10000.0, 100000.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Held-out domain ids; empty means every domain in turn.
    pub targets: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    /// Template for every run; `algorithm` and `seed` are overwritten.
    pub train: TrainConfig,
    pub sweep: SweepGrid,
    pub toy: ToySpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic {
                spec: SyntheticSpec::default(),
                seed: 0,
            },
            targets: Vec::new(),
            algorithms: vec![Algorithm::SdmixFull],
            seeds: vec![0],
            train: TrainConfig::default(),
            sweep: SweepGrid::default(),
            toy: ToySpec::default(),
        }
    }
}

/// Reads typed values from one section and remembers which keys were used.
struct Section<'a> {
    name: &'static str,
    props: Option<&'a Properties>,
    used: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(ini: &'a Ini, name: &'static str) -> Self {
        Self {
            name,
            props: ini.section(Some(name)),
            used: BTreeSet::new(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        let v = self.props?.get(key)?;
        self.used.insert(key.to_string());
        Some(v.trim())
    }

    fn type_error(&self, key: &str, expected: &str, got: &str) -> Error {
        Error::Config(format!("{}.{key}: expected {expected}, got '{got}'", self.name))
    }

    fn parse<T: FromStr>(&mut self, key: &str, expected: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.raw(key) {
            *slot = v.parse().map_err(|_| self.type_error(key, expected, v))?;
        }
        Ok(())
    }

    fn keyword<T>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T: FromStr<Err = String>,
    {
        if let Some(v) = self.raw(key) {
            *slot = v.parse().map_err(|e: String| self.type_error(key, &e, v))?;
        }
        Ok(())
    }

    fn list<T: FromStr>(&mut self, key: &str, expected: &str, slot: &mut Vec<T>) -> Result<()> {
        if let Some(v) = self.raw(key) {
            *slot = split_list(v)
                .map(|item| item.parse().map_err(|_| self.type_error(key, expected, item)))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    fn keyword_list<T>(&mut self, key: &str, slot: &mut Vec<T>) -> Result<()>
    where
        T: FromStr<Err = String>,
    {
        if let Some(v) = self.raw(key) {
            *slot = split_list(v)
                .map(|item| item.parse().map_err(|e: String| self.type_error(key, &e, item)))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    fn unknown(&self) -> Vec<String> {
        self.props
            .map(|p| {
                p.iter()
                    .filter(|(k, _)| !self.used.contains(*k))
                    .map(|(k, _)| format!("{}.{k}", self.name))
                    .collect()
            })
            .unwrap_or_default()
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

const NUM: &str = "a number";
const UINT: &str = "a nonnegative integer";
const BOOL: &str = "true or false";

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_str(&text, base)
    }

    /// Parses INI text; relative CSV paths resolve against `base_dir`.
    pub fn parse_str(text: &str, base_dir: &Path) -> Result<Self> {
        let opt = ParseOption {
            enabled_escape: false,
            ..ParseOption::default()
        };
        let ini = Ini::load_from_str_opt(text, opt).map_err(|e| Error::Config(e.to_string()))?;
        let mut unknown: Vec<String> = Vec::new();
        for (name, props) in ini.iter() {
            match name {
                None => unknown.extend(props.iter().map(|(k, _)| k.to_string())),
                Some(s) if !SECTIONS.contains(&s) => unknown.push(format!("[{s}]")),
                _ => {}
            }
        }

        let mut cfg = ExperimentConfig::default();

        let mut syn = Section::new(&ini, "synthetic");
        let mut spec = SyntheticSpec::default();
        let mut syn_seed = 0u64;
        syn.parse("num_domains", UINT, &mut spec.num_domains)?;
        syn.parse("num_classes", UINT, &mut spec.num_classes)?;
        syn.parse("channels", UINT, &mut spec.channels)?;
        syn.parse("window_len", UINT, &mut spec.window_len)?;
        syn.parse("windows_per_class", UINT, &mut spec.windows_per_class)?;
        syn.parse("noise_sigma", NUM, &mut spec.noise_sigma)?;
        syn.list("sigma_multipliers", "a list of numbers", &mut spec.sigma_multipliers)?;
        syn.parse("separation", NUM, &mut spec.separation)?;
        syn.parse("amplitude_spread", NUM, &mut spec.amplitude_spread)?;
        syn.parse("offset_spread", NUM, &mut spec.offset_spread)?;
        syn.parse("phase_jitter", NUM, &mut spec.phase_jitter)?;
        syn.parse("domain_noise_spread", NUM, &mut spec.domain_noise_spread)?;
        syn.parse("seed", UINT, &mut syn_seed)?;
        if spec.sigma_multipliers.len() != spec.num_classes && syn.raw("sigma_multipliers").is_none() {
            spec.sigma_multipliers = vec![1.0; spec.num_classes];
        }
        unknown.extend(syn.unknown());

        let mut data = Section::new(&ini, "data");
        let mut source = "synthetic".to_string();
        let mut files: Vec<String> = Vec::new();
        let mut window_len = 128usize;
        let mut overlap = 0.5f64;
        data.parse("source", "synthetic or csv", &mut source)?;
        data.list("files", "a list of paths", &mut files)?;
        data.parse("window_len", UINT, &mut window_len)?;
        data.parse("overlap", NUM, &mut overlap)?;
        data.list("targets", "a list of domain ids", &mut cfg.targets)?;
        cfg.data = match source.as_str() {
            "synthetic" => DataSource::Synthetic { spec, seed: syn_seed },
            "csv" => {
                if files.is_empty() {
                    return Err(Error::Config("data.files is required when data.source = csv".into()));
                }
                if !(0.0..1.0).contains(&overlap) {
                    return Err(Error::Config(format!("data.overlap {overlap} outside [0, 1)")));
                }
                DataSource::Csv {
                    files: files.iter().map(|f| base_dir.join(f)).collect(),
                    window_len,
                    overlap,
                }
            }
            other => return Err(data.type_error("source", "synthetic or csv", other)),
        };
        unknown.extend(data.unknown());

        let mut model = Section::new(&ini, "model");
        let m = &mut cfg.train.model;
        model.parse("kernel_width", UINT, &mut m.kernel_width)?;
        model.parse("channels_block1", UINT, &mut m.channels_per_block[0])?;
        model.parse("channels_block2", UINT, &mut m.channels_per_block[1])?;
        model.parse("pool_width", UINT, &mut m.pool_width)?;
        model.parse("bn_eps", NUM, &mut m.bn_eps)?;
        model.parse("bn_momentum", NUM, &mut m.bn_momentum)?;
        if let Some(v) = model.raw("num_classes") {
            m.num_classes = match v {
                "auto" => None,
                _ => Some(v.parse().map_err(|_| model.type_error("num_classes", "an integer or auto", v))?),
            };
        }
        unknown.extend(model.unknown());

        let mut train = Section::new(&ini, "train");
        let t = &mut cfg.train;
        if train.props.is_some_and(|p| p.contains_key("algorithm")) {
            let mut a = Algorithm::SdmixFull;
            train.keyword("algorithm", &mut a)?;
            cfg.algorithms = vec![a];
        }
        train.keyword_list("algorithms", &mut cfg.algorithms)?;
        if let Some(v) = train.raw("seed") {
            cfg.seeds = vec![v.parse().map_err(|_| train.type_error("seed", UINT, v))?];
        }
        train.list("seeds", "a list of nonnegative integers", &mut cfg.seeds)?;
        train.parse("alpha", NUM, &mut t.alpha)?;
        train.keyword("mix_space", &mut t.mix_space)?;
        train.keyword("range_metric", &mut t.range_metric)?;
        train.keyword("range_variant", &mut t.range_variant)?;
        train.parse("refresh_every_steps", UINT, &mut t.refresh_every_steps)?;
        train.parse("learning_rate", NUM, &mut t.learning_rate)?;
        train.parse("weight_decay", NUM, &mut t.weight_decay)?;
        train.parse("batch_per_domain", UINT, &mut t.batch_per_domain)?;
        train.parse("max_epochs", UINT, &mut t.max_epochs)?;
        train.parse("train_fraction", NUM, &mut t.split.train_fraction)?;
        train.parse("stratified", BOOL, &mut t.split.stratified)?;
        train.parse("split_seed", UINT, &mut t.split.seed)?;
        train.list("alpha_grid", "a list of numbers", &mut cfg.sweep.alpha)?;
        train.list("top_c_grid", "a list of integers", &mut cfg.sweep.top_c)?;
        train.list("gamma_grid", "a list of numbers", &mut cfg.sweep.gamma)?;
        unknown.extend(train.unknown());

        let mut margin = Section::new(&ini, "margin");
        let mc = &mut cfg.train.margin;
        margin.parse("gamma", NUM, &mut mc.gamma)?;
        margin.parse("top_c", UINT, &mut mc.top_c)?;
        if let Some(v) = margin.raw("p") {
            mc.p = match v {
                "inf" => f64::INFINITY,
                _ => v.parse().map_err(|_| margin.type_error("p", "a number or inf", v))?,
            };
        }
        margin.parse("denom_floor", NUM, &mut mc.denom_floor)?;
        margin.parse("epsilon_noisy", NUM, &mut mc.epsilon_noisy)?;
        unknown.extend(margin.unknown());

        let mut toy = Section::new(&ini, "toy");
        let ts = &mut cfg.toy;
        toy.parse("num_classes", UINT, &mut ts.num_classes)?;
        toy.parse("samples_per_class", UINT, &mut ts.samples_per_class)?;
        toy.parse("base_sigma", NUM, &mut ts.base_sigma)?;
        toy.list("sigma_multipliers", "a list of numbers", &mut ts.sigma_multipliers)?;
        toy.parse("separation", NUM, &mut ts.separation)?;
        toy.parse("hidden", UINT, &mut ts.hidden)?;
        toy.parse("max_epochs", UINT, &mut ts.max_epochs)?;
        toy.parse("grid_w", UINT, &mut ts.grid_w)?;
        toy.parse("grid_h", UINT, &mut ts.grid_h)?;
        toy.parse("extent", NUM, &mut ts.extent)?;
        toy.keyword_list("algorithms", &mut ts.algorithms)?;
        unknown.extend(toy.unknown());

        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("train.algorithms and train.seeds must be nonempty".into()));
        }
        if let DataSource::Synthetic { spec, .. } = &self.data {
            spec.validate()?;
        }
        for a in &self.algorithms {
            TrainConfig {
                algorithm: *a,
                ..self.train.clone()
            }
            .validate()?;
        }
        self.toy.validate()
    }

    /// One run's training configuration.
    pub fn run_config(&self, algorithm: Algorithm, seed: u64) -> TrainConfig {
        TrainConfig {
            algorithm,
            seed,
            ..self.train.clone()
        }
    }

    /// Fully resolved configuration as INI text.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut section = |name: &str, rows: Vec<(&str, String)>| {
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in rows {
                out.push_str(&format!("{k} = {v}\n"));
            }
            out.push('\n');
        };
        let (source, spec, syn_seed) = match &self.data {
            DataSource::Synthetic { spec, seed } => ("synthetic", spec.clone(), *seed),
            DataSource::Csv { .. } => ("csv", SyntheticSpec::default(), 0),
        };
        let mut data = vec![("source", source.to_string())];
        if let DataSource::Csv {
            files,
            window_len,
            overlap,
        } = &self.data
        {
            let f: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
            data.push(("files", f.join(", ")));
            data.push(("window_len", window_len.to_string()));
            data.push(("overlap", overlap.to_string()));
        }
        if !self.targets.is_empty() {
            data.push(("targets", join(&self.targets)));
        }
        section("data", data);

        let m: &ModelConfig = &self.train.model;
        let mut model = vec![
            ("kernel_width", m.kernel_width.to_string()),
            ("channels_block1", m.channels_per_block[0].to_string()),
            ("channels_block2", m.channels_per_block[1].to_string()),
            ("pool_width", m.pool_width.to_string()),
            ("bn_eps", m.bn_eps.to_string()),
            ("bn_momentum", m.bn_momentum.to_string()),
        ];
        model.push((
            "num_classes",
            m.num_classes.map_or("auto".to_string(), |c| c.to_string()),
        ));
        section("model", model);

        let t: &TrainConfig = &self.train;
        let s: &SplitSpec = &t.split;
        section(
            "train",
            vec![
                ("algorithms", join(&self.algorithms)),
                ("seeds", join(&self.seeds)),
                ("alpha", t.alpha.to_string()),
                ("mix_space", t.mix_space.to_string()),
                ("range_metric", t.range_metric.to_string()),
                ("range_variant", t.range_variant.to_string()),
                ("refresh_every_steps", t.refresh_every_steps.to_string()),
                ("learning_rate", t.learning_rate.to_string()),
                ("weight_decay", t.weight_decay.to_string()),
                ("batch_per_domain", t.batch_per_domain.to_string()),
                ("max_epochs", t.max_epochs.to_string()),
                ("train_fraction", s.train_fraction.to_string()),
                ("stratified", s.stratified.to_string()),
                ("split_seed", s.seed.to_string()),
                ("alpha_grid", join(&self.sweep.alpha)),
                ("top_c_grid", join(&self.sweep.top_c)),
                ("gamma_grid", join(&self.sweep.gamma)),
            ],
        );

        let mc: &MarginConfig = &t.margin;
        let p = if mc.p.is_infinite() { "inf".to_string() } else { mc.p.to_string() };
        section(
            "margin",
            vec![
                ("gamma", mc.gamma.to_string()),
                ("top_c", mc.top_c.to_string()),
                ("p", p),
                ("denom_floor", mc.denom_floor.to_string()),
                ("epsilon_noisy", mc.epsilon_noisy.to_string()),
            ],
        );

        if source == "synthetic" {
            section(
                "synthetic",
                vec![
                    ("num_domains", spec.num_domains.to_string()),
                    ("num_classes", spec.num_classes.to_string()),
                    ("channels", spec.channels.to_string()),
                    ("window_len", spec.window_len.to_string()),
                    ("windows_per_class", spec.windows_per_class.to_string()),
                    ("noise_sigma", spec.noise_sigma.to_string()),
                    ("sigma_multipliers", join(&spec.sigma_multipliers)),
                    ("separation", spec.separation.to_string()),
                    ("amplitude_spread", spec.amplitude_spread.to_string()),
                    ("offset_spread", spec.offset_spread.to_string()),
                    ("phase_jitter", spec.phase_jitter.to_string()),
                    ("domain_noise_spread", spec.domain_noise_spread.to_string()),
                    ("seed", syn_seed.to_string()),
                ],
            );
        }

        let ts = &self.toy;
        section(
            "toy",
            vec![
                ("num_classes", ts.num_classes.to_string()),
                ("samples_per_class", ts.samples_per_class.to_string()),
                ("base_sigma", ts.base_sigma.to_string()),
                ("sigma_multipliers", join(&ts.sigma_multipliers)),
                ("separation", ts.separation.to_string()),
                ("hidden", ts.hidden.to_string()),
                ("max_epochs", ts.max_epochs.to_string()),
                ("grid_w", ts.grid_w.to_string()),
                ("grid_h", ts.grid_h.to_string()),
                ("extent", ts.extent.to_string()),
                ("algorithms", join(&ts.algorithms)),
            ],
        );
        out.truncate(out.trim_end().len());
        out.push('\n');
        out
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}
