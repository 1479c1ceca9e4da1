//! Training phase: find which feature values disrupt rankings the most.
//!
//! 1. [`find_min_max`] collects per-feature extrema over a corpus.
//! 2. [`sample_range`] discretizes each feature between those extrema.
//! 3. [`find_disruptiveness`] sets every item's value to every sample value,
//!    one cell at a time, and averages the resulting AP correlations against
//!    the unperturbed ranking. That average is the *disruptive score*; lower
//!    is more disruptive.
//! 4. [`select_points_of_interest`] bins the disruptive scores and keeps the
//!    most disruptive value per bin.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ListenError, Result};
use crate::perturbation::Perturber;
use crate::ranking::{check_arity, FeatureCatalog, FeatureKind, FeatureSpec, RankingInstance, ScoringModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Points on the endpoint-inclusive grid over a continuous range.
    pub continuous_samples: usize,
    /// Integers per interval for over-large discrete ranges. When absent the
    /// range is split into `discrete_bound` intervals.
    pub bin_size: Option<usize>,
    /// Most predefined values kept per feature.
    pub predefined_cap: usize,
    /// Number of disruptive-score bins used to pick points of interest.
    pub tau_bins: usize,
    /// Full-grid mode: continuous features are sampled at every multiple of
    /// this step between their extrema instead of `continuous_samples` points.
    pub grid_step: Option<f64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            continuous_samples: 20,
            bin_size: None,
            predefined_cap: 20,
            tau_bins: 20,
            grid_step: None,
        }
    }
}

/// Step used when full-grid mode is requested without an explicit step.
pub const DEFAULT_GRID_STEP: f64 = 0.01;

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("continuous_samples", self.continuous_samples),
            ("predefined_cap", self.predefined_cap),
            ("tau_bins", self.tau_bins),
            ("bin_size", self.bin_size.unwrap_or(1)),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ListenError::Configuration(format!("{name} must be positive")));
            }
        }
        match self.grid_step {
            Some(step) if !(step > 0.0 && step.is_finite()) => Err(ListenError::Configuration(
                format!("grid_step must be positive, got {step}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub features: Vec<Bounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub value: f64,
    /// Mean AP correlation over all trials; absent when no trial ran.
    pub disruptive_score: Option<f64>,
    pub trial_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDisruptiveness {
    pub name: String,
    pub samples: Vec<SampleScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisruptivenessTable {
    pub features: Vec<FeatureDisruptiveness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOfInterest {
    pub value: f64,
    pub disruptive_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePoints {
    pub name: String,
    pub points: Vec<PointOfInterest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointsOfInterest {
    pub features: Vec<FeaturePoints>,
}

impl PointsOfInterest {
    /// Perturbation values per feature.
    pub fn values(&self) -> Vec<Vec<f64>> {
        self.features
            .iter()
            .map(|f| f.points.iter().map(|p| p.value).collect())
            .collect()
    }

    /// Points of interest taken verbatim from value lists, without scores.
    pub fn from_values(catalog: &FeatureCatalog, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != catalog.len() {
            return Err(ListenError::Dimension {
                context: "points of interest".to_string(),
                expected: catalog.len(),
                actual: values.len(),
            });
        }
        Ok(Self {
            features: catalog
                .specs()
                .iter()
                .zip(values)
                .map(|(spec, vals)| FeaturePoints {
                    name: spec.name.clone(),
                    points: vals
                        .into_iter()
                        .map(|value| PointOfInterest {
                            value,
                            disruptive_score: None,
                        })
                        .collect(),
                })
                .collect(),
        })
    }
}

/// Cleans accumulated float noise: values within 1e-12 (relative) of a
/// multiple of 1e-9 are moved onto it, so `0.1 * 3` reads back as `0.3`.
pub(crate) fn snap(v: f64) -> f64 {
    let s = (v * 1e9).round() / 1e9;
    if (s - v).abs() <= 1e-12 * v.abs().max(1.0) {
        s
    } else {
        v
    }
}

/// Every multiple of `step` from `lo` up to `hi`, both included when `hi - lo`
/// is a whole number of steps.
pub fn grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(ListenError::Domain(format!("grid step must be positive, got {step}")));
    }
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(ListenError::Domain(format!("invalid grid domain [{lo}, {hi}]")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| snap(lo + k as f64 * step).min(hi)).collect())
}

pub fn find_min_max(corpus: &[RankingInstance]) -> Result<FeatureBounds> {
    let n = corpus_arity(corpus)?;
    let mut bounds = vec![
        Bounds {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        n
    ];
    for instance in corpus {
        for row in instance.rows().take(instance.n_items()) {
            for (b, &v) in bounds.iter_mut().zip(row) {
                b.min = b.min.min(v);
                b.max = b.max.max(v);
            }
        }
    }
    Ok(FeatureBounds { features: bounds })
}

/// Shared feature count of a corpus with at least one item.
fn corpus_arity(corpus: &[RankingInstance]) -> Result<usize> {
    let mut arity = None;
    for (i, instance) in corpus.iter().enumerate() {
        if instance.n_items() == 0 {
            continue;
        }
        match arity {
            None => arity = Some(instance.n_features()),
            Some(n) if n != instance.n_features() => {
                return Err(ListenError::Dimension {
                    context: format!("instance {i} (user '{}')", instance.user_id()),
                    expected: n,
                    actual: instance.n_features(),
                })
            }
            Some(_) => {}
        }
    }
    arity.ok_or_else(|| ListenError::EmptyInput("corpus contains no items".to_string()))
}

pub fn sample_range(spec: &FeatureSpec, bounds: Bounds, config: &SamplingConfig) -> Result<Vec<f64>> {
    let Bounds { min, max } = bounds;
    if !(min <= max) {
        return Err(ListenError::Domain(format!(
            "feature '{}': min {min} exceeds max {max}",
            spec.name
        )));
    }
    let values = match spec.kind {
        FeatureKind::Predefined => {
            let tol = 1e-12 * min.abs().max(max.abs()).max(1.0);
            spec.predefined_values
                .as_deref()
                .unwrap_or_default()
                .iter()
                .copied()
                .filter(|&v| v >= min - tol && v <= max + tol)
                .take(config.predefined_cap)
                .collect()
        }
        _ if min == max => vec![min],
        FeatureKind::Discrete => discrete_range(min, max, spec.discrete_bound, config.bin_size),
        FeatureKind::Continuous => match config.grid_step {
            Some(step) => grid(min, max, step)?,
            None => {
                let n = config.continuous_samples;
                if n == 1 {
                    vec![min]
                } else {
                    let width = max - min;
                    (0..n)
                        .map(|i| {
                            if i == n - 1 {
                                max
                            } else {
                                snap(min + width * i as f64 / (n - 1) as f64)
                            }
                        })
                        .collect()
                }
            }
        },
    };
    Ok(values)
}

fn discrete_range(min: f64, max: f64, bound: usize, bin_size: Option<usize>) -> Vec<f64> {
    let lo = min.ceil() as i64;
    let hi = max.floor() as i64;
    if lo > hi {
        return vec![min.round()];
    }
    let count = (hi - lo + 1) as u64;
    if count <= bound as u64 {
        return (lo..=hi).map(|v| v as f64).collect();
    }
    let intervals = match bin_size {
        Some(size) => count.div_ceil(size as u64),
        None => bound as u64,
    }
    .clamp(1, count);
    (0..intervals)
        .map(|j| {
            let a = lo + (j * count / intervals) as i64;
            let b = lo + ((j + 1) * count / intervals) as i64 - 1;
            (a + b).div_euclid(2) as f64
        })
        .collect()
}

/// Average AP correlation per `(feature, sample value)` over every item of
/// every instance whose current value differs from the sample value.
pub fn find_disruptiveness<M: ScoringModel + ?Sized>(
    corpus: &[RankingInstance],
    model: &M,
    catalog: &FeatureCatalog,
    config: &SamplingConfig,
) -> Result<DisruptivenessTable> {
    config.validate()?;
    let bounds = find_min_max(corpus)?;
    if bounds.features.len() != catalog.len() {
        let first_unmatched = bounds.features.len().min(catalog.len());
        let offender = match catalog.get(first_unmatched) {
            Some(spec) => format!("catalog feature '{}' has no column in the corpus", spec.name),
            None => format!("corpus column {first_unmatched} has no catalog feature"),
        };
        return Err(ListenError::Dimension {
            context: format!("feature catalog vs corpus: {offender}"),
            expected: catalog.len(),
            actual: bounds.features.len(),
        });
    }
    for instance in corpus {
        check_arity(model, instance)?;
    }
    let samples: Vec<Vec<f64>> = catalog
        .specs()
        .iter()
        .zip(&bounds.features)
        .map(|(spec, &b)| sample_range(spec, b, config))
        .collect::<Result<_>>()?;

    // One task per instance: partial (sum, count) per feature and sample.
    let partials: Vec<Vec<Vec<(f64, u64)>>> = corpus
        .par_iter()
        .map(|instance| instance_partials(model, instance, &samples))
        .collect::<Result<_>>()?;

    let features = catalog
        .specs()
        .iter()
        .enumerate()
        .map(|(f, spec)| FeatureDisruptiveness {
            name: spec.name.clone(),
            samples: samples[f]
                .iter()
                .enumerate()
                .map(|(s, &value)| {
                    let (sum, count) = partials
                        .iter()
                        .fold((0.0, 0u64), |(sum, count), p| (sum + p[f][s].0, count + p[f][s].1));
                    SampleScore {
                        value,
                        disruptive_score: (count > 0).then(|| sum / count as f64),
                        trial_count: count,
                    }
                })
                .collect(),
        })
        .collect();
    Ok(DisruptivenessTable { features })
}

fn instance_partials<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &RankingInstance,
    samples: &[Vec<f64>],
) -> Result<Vec<Vec<(f64, u64)>>> {
    let empty = || samples.iter().map(|s| vec![(0.0, 0); s.len()]).collect::<Vec<_>>();
    if instance.n_items() == 0 {
        return Ok(empty());
    }
    let mut perturber = Perturber::new(model, instance)?;
    let mut out = empty();
    for (f, values) in samples.iter().enumerate() {
        for (s, &value) in values.iter().enumerate() {
            let (mut sum, mut count) = (0.0, 0u64);
            for item in 0..instance.n_items() {
                if perturber.instance().value(item, f) == value {
                    continue;
                }
                sum += perturber.trial(item, f, value)?.tau;
                count += 1;
            }
            out[f][s] = (sum, count);
        }
    }
    Ok(out)
}

/// Mean AP correlation per `(item, feature)` when each feature sweeps a full
/// grid over its domain. Diagnostic companion of [`find_disruptiveness`];
/// `None` where every grid value equals the current value.
pub fn disruptiveness_per_item<M: ScoringModel + ?Sized>(
    instance: &RankingInstance,
    model: &M,
    domains: &[Bounds],
    grid_step: f64,
) -> Result<Vec<Vec<Option<f64>>>> {
    let explained = crate::explain::oracle_explain_detailed(
        instance,
        model,
        domains,
        grid_step,
        &crate::explain::ExplainConfig::default(),
    )?;
    Ok(explained.mean_tau)
}

/// Keeps, per feature, the most disruptive sample value of each occupied
/// disruptive-score bin. Predefined features keep all their values.
pub fn select_points_of_interest(
    table: &DisruptivenessTable,
    catalog: &FeatureCatalog,
    config: &SamplingConfig,
) -> Result<PointsOfInterest> {
    config.validate()?;
    if table.features.len() != catalog.len() {
        return Err(ListenError::Dimension {
            context: "disruptiveness table vs catalog".to_string(),
            expected: catalog.len(),
            actual: table.features.len(),
        });
    }
    let features = table
        .features
        .iter()
        .zip(catalog.specs())
        .map(|(entry, spec)| {
            if entry.samples.is_empty() {
                return Err(ListenError::Configuration(format!(
                    "feature '{}' has no sampled values",
                    spec.name
                )));
            }
            let points = if spec.kind == FeatureKind::Predefined {
                entry
                    .samples
                    .iter()
                    .take(config.predefined_cap)
                    .map(|s| PointOfInterest {
                        value: s.value,
                        disruptive_score: s.disruptive_score,
                    })
                    .collect()
            } else {
                binned_minima(&entry.samples, config.tau_bins)
            };
            Ok(FeaturePoints {
                name: spec.name.clone(),
                points,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PointsOfInterest { features })
}

fn binned_minima(samples: &[SampleScore], bins: usize) -> Vec<PointOfInterest> {
    let scored: Vec<(f64, f64)> = samples
        .iter()
        .filter_map(|s| s.disruptive_score.map(|d| (s.value, d)))
        .collect();
    let Some(lo) = scored.iter().map(|s| s.1).reduce(f64::min) else {
        return Vec::new();
    };
    let hi = scored.iter().map(|s| s.1).fold(lo, f64::max);
    let width = hi - lo;

    let mut kept: Vec<Option<(f64, f64)>> = vec![None; bins];
    for &(value, score) in &scored {
        let bin = if width > 0.0 {
            (((score - lo) / width * bins as f64).floor() as usize).min(bins - 1)
        } else {
            0
        };
        match kept[bin] {
            Some((_, best)) if best <= score => {}
            _ => kept[bin] = Some((value, score)),
        }
    }
    kept.into_iter()
        .flatten()
        .map(|(value, score)| PointOfInterest {
            value,
            disruptive_score: Some(score),
        })
        .collect()
}
