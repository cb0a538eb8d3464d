//! Activity semantic statistics and semantic-aware Mixup.
//!
//! A class's semantic range is its spread around the class center inside
//! one domain. When two samples are mixed with weight λ, the label weight
//! becomes `t = λR₁ / (λR₁ + (1 − λ)R₂)`, so the class with the wider
//! range claims more of the mixed label while the inputs are still mixed
//! with λ.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand_distr::{Distribution, Gamma};

use crate::data::{stack_windows, DomainDataset};
use crate::error::{Error, Result};
use crate::model::ActivityNet;
use crate::numerics::Tensor;
use crate::rng::Rng;

/// Denominator floor below which the label weight falls back to λ.
pub const FACTOR_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixSpace {
    Input,
    Feature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    L1,
    L2,
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RangeVariant {
    Max,
    Mean,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(format!("one of {}", [$($name),+].join("|"))),
                }
            }
        }
    };
}

keyword_enum!(MixSpace { Input => "input", Feature => "feature" });
keyword_enum!(Metric { L1 => "l1", L2 => "l2", Cosine => "cosine" });
keyword_enum!(RangeVariant { Max => "max", Mean => "mean" });

/// Arithmetic mean of a nonempty set of equal-length vectors.
pub fn class_center(samples: &[&[f64]]) -> Result<Vec<f64>> {
    let first = samples.first().ok_or(Error::EmptySlice)?;
    let mut acc = vec![0.0; first.len()];
    for s in samples {
        if s.len() != acc.len() {
            return Err(Error::Shape {
                op: "class_center",
                lhs: vec![acc.len()],
                rhs: vec![s.len()],
            });
        }
        acc.iter_mut().zip(s.iter()).for_each(|(a, v)| *a += v);
    }
    let n = samples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "distance",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    Ok(match metric {
        Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Metric::L2 => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
        Metric::Cosine => {
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroVector);
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot / (na * nb)).max(0.0)
        }
    })
}

/// Max or mean distance of the samples to their center.
pub fn semantic_range(samples: &[&[f64]], center: &[f64], metric: Metric, variant: RangeVariant) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySlice);
    }
    let mut max: f64 = 0.0;
    let mut total = 0.0;
    for s in samples {
        let d = distance(s, center, metric)?;
        max = max.max(d);
        total += d;
    }
    Ok(match variant {
        RangeVariant::Max => max,
        RangeVariant::Mean => total / samples.len() as f64,
    })
}

/// Label weight for a mixed pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelWeight {
    pub t: f64,
    /// Set when the ranges were too small to weigh and `t` fell back to λ.
    pub degenerate: bool,
}

/// `t = λR₁ / (λR₁ + (1 − λ)R₂)`; falls back to `t = λ` when the
/// denominator is below [`FACTOR_FLOOR`].
pub fn semantic_factor(lambda: f64, r1: f64, r2: f64) -> LabelWeight {
    let denom = lambda * r1 + (1.0 - lambda) * r2;
    if !(denom >= FACTOR_FLOOR) {
        return LabelWeight {
            t: lambda,
            degenerate: true,
        };
    }
    // Equal ranges cancel exactly.
    if r1 == r2 {
        return LabelWeight {
            t: lambda,
            degenerate: false,
        };
    }
    LabelWeight {
        t: (lambda * r1 / denom).clamp(0.0, 1.0),
        degenerate: false,
    }
}

/// Draws λ ~ Beta(α, α) as `X / (X + Y)` with `X, Y ~ Gamma(α, 1)`.
pub fn sample_lambda(alpha: f64, rng: &mut Rng) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("Beta parameter alpha = {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    loop {
        let x = gamma.sample(rng);
        let y = gamma.sample(rng);
        let s = x + y;
        if s > 0.0 && s.is_finite() {
            return Ok(x / s);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileEntry {
    pub center: Vec<f64>,
    pub range: f64,
}

/// Per-(domain, class) centers and ranges. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticProfile {
    pub entries: BTreeMap<(usize, usize), ProfileEntry>,
    pub space: MixSpace,
    pub metric: Metric,
    pub variant: RangeVariant,
    pub epoch_stamp: usize,
}

impl SemanticProfile {
    /// Profile where every listed cell has the same range.
    pub fn constant(cells: &[(usize, usize)], range: f64, space: MixSpace) -> Self {
        Self {
            entries: cells
                .iter()
                .map(|&k| {
                    (
                        k,
                        ProfileEntry {
                            center: Vec::new(),
                            range,
                        },
                    )
                })
                .collect(),
            space,
            metric: Metric::L2,
            variant: RangeVariant::Mean,
            epoch_stamp: 0,
        }
    }

    pub fn range(&self, domain: usize, class: usize) -> Option<f64> {
        self.entries.get(&(domain, class)).map(|e| e.range)
    }

    fn require(&self, domain: usize, class: usize) -> Result<f64> {
        self.range(domain, class)
            .ok_or(Error::MissingProfile { domain, class })
    }

    /// Label weight for mixing `(domain a, class a)` with weight λ against
    /// `(domain b, class b)`.
    pub fn label_weight(&self, lambda: f64, a: (usize, usize), b: (usize, usize)) -> Result<LabelWeight> {
        let r1 = self.require(a.0, a.1)?;
        let r2 = self.require(b.0, b.1)?;
        Ok(semantic_factor(lambda, r1, r2))
    }

    /// Diagnostic dump: `domain,class,range,space,metric,variant`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "domain,class,range,space,metric,variant")?;
        for ((d, c), e) in &self.entries {
            writeln!(
                w,
                "{d},{c},{},{},{},{}",
                e.range, self.space, self.metric, self.variant
            )?;
        }
        Ok(())
    }
}

/// A mixed sample: inputs mixed with λ, labels weighted by `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedSample {
    pub x_tilde: Tensor,
    pub y1: usize,
    pub y2: usize,
    pub t: f64,
    pub lambda: f64,
    pub domains: (usize, usize),
}

#[allow(clippy::too_many_arguments)]
pub fn semantic_mix(
    x1: &Tensor,
    y1: usize,
    dom_i: usize,
    x2: &Tensor,
    y2: usize,
    dom_j: usize,
    lambda: f64,
    profile: &SemanticProfile,
) -> Result<MixedSample> {
    if x1.shape() != x2.shape() {
        return Err(Error::Shape {
            op: "semantic_mix",
            lhs: x1.shape().to_vec(),
            rhs: x2.shape().to_vec(),
        });
    }
    let w = profile.label_weight(lambda, (dom_i, y1), (dom_j, y2))?;
    let data = x1
        .data()
        .iter()
        .zip(x2.data())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok(MixedSample {
        x_tilde: Tensor::new(x1.shape().to_vec(), data)?,
        y1,
        y2,
        t: w.t,
        lambda,
        domains: (dom_i, dom_j),
    })
}

/// Settings that determine how a profile is computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileSettings {
    pub space: MixSpace,
    pub metric: Metric,
    pub variant: RangeVariant,
}

const FEATURE_BATCH: usize = 256;

/// Vectors of every window of a domain in the requested space.
fn embed(net: &ActivityNet, ds: &DomainDataset, space: MixSpace) -> Result<Vec<Vec<f64>>> {
    match space {
        MixSpace::Input => Ok(ds.windows.iter().map(|w| w.x.data().to_vec()).collect()),
        MixSpace::Feature => {
            let mut out = Vec::with_capacity(ds.len());
            for chunk in ds.windows.chunks(FEATURE_BATCH) {
                let z = net.features(&stack_windows(chunk)?)?;
                let f = z.shape()[1];
                out.extend(z.data().chunks(f).map(<[f64]>::to_vec));
            }
            Ok(out)
        }
    }
}

/// Recomputes every center and range over the given training splits.
/// Feature-space profiles use inference-mode features. A (domain, class)
/// cell with no windows is simply absent.
pub fn refresh_profile(
    net: &ActivityNet,
    training: &[DomainDataset],
    settings: ProfileSettings,
    epoch_stamp: usize,
) -> Result<SemanticProfile> {
    let mut entries = BTreeMap::new();
    for ds in training {
        let vectors = embed(net, ds, settings.space)?;
        for (class, idx) in ds.by_class() {
            let slice: Vec<&[f64]> = idx.iter().map(|&i| vectors[i].as_slice()).collect();
            let center = class_center(&slice)?;
            let range = semantic_range(&slice, &center, settings.metric, settings.variant)?;
            entries.insert((ds.domain_id, class), ProfileEntry { center, range });
        }
    }
    Ok(SemanticProfile {
        entries,
        space: settings.space,
        metric: settings.metric,
        variant: settings.variant,
        epoch_stamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SensorWindow;
    use crate::model::ArchSpec;
    use crate::rng;

    #[test]
    fn center_examples() {
        assert_eq!(class_center(&[&[1.5, -2.0]]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(class_center(&[&[0.0, 0.0], &[2.0, 2.0]]).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(class_center(&[]), Err(Error::EmptySlice)));
    }

    #[test]
    fn range_examples() {
        let one: &[f64] = &[3.0, 4.0];
        for v in [RangeVariant::Max, RangeVariant::Mean] {
            assert_eq!(semantic_range(&[one], one, Metric::L2, v).unwrap(), 0.0);
        }
        // Two points 4 apart, center midway: both variants give 2.
        let (a, b): (&[f64], &[f64]) = (&[0.0, 0.0], &[4.0, 0.0]);
        let c = class_center(&[a, b]).unwrap();
        assert_eq!(semantic_range(&[a, b], &c, Metric::L2, RangeVariant::Mean).unwrap(), 2.0);
        assert_eq!(semantic_range(&[a, b], &c, Metric::L2, RangeVariant::Max).unwrap(), 2.0);
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        let z: &[f64] = &[0.0, 0.0];
        assert!(matches!(
            semantic_range(&[z], &[1.0, 0.0], Metric::Cosine, RangeVariant::Max),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn factor_examples() {
        assert_eq!(semantic_factor(0.3, 2.0, 2.0).t, 0.3);
        assert_eq!(semantic_factor(1.0, 1.0, 5.0).t, 1.0);
        assert_eq!(semantic_factor(0.0, 1.0, 5.0).t, 0.0);
        assert!((semantic_factor(0.5, 2.0, 1.0).t - 2.0 / 3.0).abs() < 1e-15);
        let w = semantic_factor(0.4, 0.0, 0.0);
        assert!(w.degenerate && w.t == 0.4);
    }

    fn two_cell_profile(r1: f64, r2: f64) -> SemanticProfile {
        let mut p = SemanticProfile::constant(&[(0, 0), (1, 1)], 1.0, MixSpace::Input);
        p.entries.get_mut(&(0, 0)).unwrap().range = r1;
        p.entries.get_mut(&(1, 1)).unwrap().range = r2;
        p
    }

    #[test]
    fn mix_examples() {
        let p = two_cell_profile(1.0, 3.0);
        let x1 = Tensor::from_vec(vec![0.0, 0.0]);
        let x2 = Tensor::from_vec(vec![2.0, 0.0]);
        let m = semantic_mix(&x1, 0, 0, &x2, 1, 1, 0.25, &p).unwrap();
        assert_eq!(m.x_tilde.data(), &[1.5, 0.0]);
        assert!((m.t - 0.1).abs() < 1e-15);
        let m = semantic_mix(&x1, 0, 0, &x2, 1, 1, 1.0, &p).unwrap();
        assert_eq!((m.x_tilde.data(), m.t), (x1.data(), 1.0));
        let eq = two_cell_profile(2.0, 2.0);
        let m = semantic_mix(&x1, 0, 0, &x2, 1, 1, 0.37, &eq).unwrap();
        assert_eq!(m.t, 0.37);
    }

    #[test]
    fn mix_reports_missing_cell() {
        let p = two_cell_profile(1.0, 1.0);
        let x = Tensor::from_vec(vec![0.0]);
        match semantic_mix(&x, 0, 0, &x, 2, 1, 0.5, &p) {
            Err(Error::MissingProfile { domain: 1, class: 2 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lambda_rejects_bad_alpha() {
        let mut r = rng::seeded(0);
        assert!(sample_lambda(0.0, &mut r).is_err());
        assert!(sample_lambda(-1.0, &mut r).is_err());
        let l = sample_lambda(0.2, &mut r).unwrap();
        assert!((0.0..=1.0).contains(&l));
    }

    #[test]
    fn lambda_is_deterministic() {
        let a: Vec<f64> = {
            let mut r = rng::seeded(9);
            (0..5).map(|_| sample_lambda(0.5, &mut r).unwrap()).collect()
        };
        let mut r = rng::seeded(9);
        let b: Vec<f64> = (0..5).map(|_| sample_lambda(0.5, &mut r).unwrap()).collect();
        assert_eq!(a, b);
    }

    fn toy_domain() -> DomainDataset {
        // Class 0: 1-D points 0, 1, 5 (center 2); class 1: 2, 2, 2.
        let pts = [(0.0, 0), (1.0, 0), (5.0, 0), (2.0, 1), (2.0, 1), (2.0, 1)];
        DomainDataset {
            domain_id: 4,
            windows: pts
                .iter()
                .map(|&(v, y)| SensorWindow {
                    x: Tensor::full(&[1, 1, 1], v),
                    y,
                    domain: 4,
                })
                .collect(),
        }
    }

    #[test]
    fn input_space_profile_by_hand() {
        let mut arch = ArchSpec::new(1, 1, 1, 2);
        arch.pool_width = 1;
        let net = ActivityNet::init(&arch, 0).unwrap();
        let s = ProfileSettings {
            space: MixSpace::Input,
            metric: Metric::L1,
            variant: RangeVariant::Max,
        };
        let p = refresh_profile(&net, &[toy_domain()], s, 0).unwrap();
        assert_eq!(p.range(4, 0), Some(3.0));
        assert_eq!(p.range(4, 1), Some(0.0));
        let mean = refresh_profile(&net, &[toy_domain()], ProfileSettings { variant: RangeVariant::Mean, ..s }, 0)
            .unwrap();
        assert_eq!(mean.range(4, 0), Some(2.0));
        assert_eq!(p.range(0, 0), None);

        // Input-space profiles ignore the network.
        let other = ActivityNet::init(&arch, 99).unwrap();
        assert_eq!(refresh_profile(&other, &[toy_domain()], s, 0).unwrap(), p);
    }

    #[test]
    fn profile_csv_dump() {
        let p = two_cell_profile(0.5, 2.0);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "domain,class,range,space,metric,variant\n0,0,0.5,input,l2,mean\n1,1,2,input,l2,mean\n"
        );
    }
}
