//! Explaining phase: per-item feature importances from perturbations at the
//! points of interest.
//!
//! Every trial changes one cell of one item, re-ranks the list and records
//! the AP correlation against the original ranking. A trial that lowers the
//! item's score feeds the feature's *upward* accumulator (the current value
//! was pushing the item up); one that raises it feeds the *downward*
//! accumulator. Importance per direction is `1 - mean(tau)`, so a feature
//! whose changes never move the ranking scores exactly zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ListenError, Result};
use crate::perturbation::{Perturber, Trial};
use crate::ranking::{check_arity, perturb, rank, score_all, RankingInstance, ScoringModel};
use crate::tau::tau_ap;
use crate::train::{grid, Bounds, PointsOfInterest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplainConfig {
    /// Number of features reported per item.
    pub k: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self { k: 3 }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(ListenError::Configuration("k must be at least 1".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: usize,
    pub importance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedFeature {
    pub feature: usize,
    pub weight: f64,
}

/// Explanation of one item's position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationLabel {
    pub item_id: String,
    /// Raw importance of each feature's current value for keeping the item up.
    pub upward: Vec<FeatureImportance>,
    /// Raw importance of each feature's current value for holding it down.
    pub downward: Vec<FeatureImportance>,
    /// The `k` strongest upward features, weights normalized to sum to one.
    pub top_k: Vec<WeightedFeature>,
}

impl ExplanationLabel {
    /// Builds a label from dense per-feature importances; `top_k` is derived
    /// from `upward`.
    pub fn from_importances(
        item_id: impl Into<String>,
        upward: &[f64],
        downward: &[f64],
        k: usize,
    ) -> Result<Self> {
        let dense = |v: &[f64]| {
            v.iter()
                .enumerate()
                .map(|(feature, &importance)| FeatureImportance { feature, importance })
                .collect()
        };
        Ok(Self {
            item_id: item_id.into(),
            upward: dense(upward),
            downward: dense(downward),
            top_k: select_top_k(upward, k)?,
        })
    }

    /// Most important upward feature, if any has positive weight.
    pub fn top_feature(&self) -> Option<usize> {
        self.top_k.first().filter(|w| w.weight > 0.0).map(|w| w.feature)
    }

    pub fn upward_importances(&self) -> Vec<f64> {
        self.upward.iter().map(|f| f.importance).collect()
    }
}

/// Scales non-negative importances to sum to one; an all-zero input stays
/// zero.
pub fn normalize_label(importances: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = importances.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(ListenError::Domain(format!("importance {bad} is negative or not finite")));
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        Ok(importances.iter().map(|v| v / total).collect())
    } else {
        Ok(importances.to_vec())
    }
}

/// Indices of the `k` largest importances (ties by ascending index) with
/// their normalized weights.
fn select_top_k(importances: &[f64], k: usize) -> Result<Vec<WeightedFeature>> {
    let k = k.min(importances.len());
    let mut top: Vec<WeightedFeature> = Vec::with_capacity(k);
    for (feature, &weight) in importances.iter().enumerate() {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(ListenError::Domain(format!("importance {weight} is negative or not finite")));
        }
        // descending weight, earlier feature first on ties
        let at = top.partition_point(|w| w.weight.total_cmp(&weight).is_ge());
        if at < k {
            if top.len() == k {
                top.pop();
            }
            top.insert(at, WeightedFeature { feature, weight });
        }
    }
    let total: f64 = top.iter().map(|w| w.weight).sum();
    if total > 0.0 {
        for w in &mut top {
            w.weight /= total;
        }
    }
    Ok(top)
}

/// Labels plus the per-`(item, feature)` mean AP correlation over all trials
/// regardless of direction.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceExplanation {
    pub labels: Vec<ExplanationLabel>,
    /// `None` where no trial ran (every value equal to the current one).
    pub mean_tau: Vec<Vec<Option<f64>>>,
}

impl InstanceExplanation {
    /// Feature whose perturbations disrupt the ranking most for `item`, in
    /// either direction. `None` when nothing moves the ranking.
    pub fn most_disruptive(&self, item: usize) -> Option<usize> {
        most_disruptive(&self.mean_tau[item])
    }
}

pub fn most_disruptive(mean_tau: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (f, tau) in mean_tau.iter().enumerate() {
        if let Some(t) = *tau {
            if t < 1.0 && best.is_none_or(|(_, b)| t < b) {
                best = Some((f, t));
            }
        }
    }
    best.map(|(f, _)| f)
}

/// Fraction of items whose predicted top feature equals the reference top
/// feature. Items without a reference feature are left out.
pub fn top1_agreement(predicted: &[Option<usize>], reference: &[Option<usize>]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(ListenError::Alignment(format!(
            "{} predicted items vs {} reference items",
            predicted.len(),
            reference.len()
        )));
    }
    let (hits, total) = predicted
        .iter()
        .zip(reference)
        .filter_map(|(p, r)| r.map(|r| *p == Some(r)))
        .fold((0usize, 0usize), |(h, t), hit| (h + usize::from(hit), t + 1));
    if total == 0 {
        return Err(ListenError::UndefinedAccuracy);
    }
    Ok(hits as f64 / total as f64)
}

#[derive(Debug, Default, Clone, Copy)]
struct Accumulator {
    sum: f64,
    count: u64,
}

impl Accumulator {
    fn push(&mut self, tau: f64) {
        self.sum += tau;
        self.count += 1;
    }

    fn mean(self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    fn importance(self) -> f64 {
        self.mean().map_or(0.0, |m| (1.0 - m).max(0.0))
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct FeatureTally {
    upward: Accumulator,
    downward: Accumulator,
    all: Accumulator,
}

impl FeatureTally {
    fn record(&mut self, trial: Trial) {
        if trial.new_score < trial.old_score {
            self.upward.push(trial.tau);
        } else if trial.new_score > trial.old_score {
            self.downward.push(trial.tau);
        }
        self.all.push(trial.tau);
    }
}

fn finish(
    instance: &RankingInstance,
    tallies: Vec<Vec<FeatureTally>>,
    config: &ExplainConfig,
) -> Result<InstanceExplanation> {
    let mut labels = Vec::with_capacity(tallies.len());
    let mut mean_tau = Vec::with_capacity(tallies.len());
    for (item, row) in tallies.into_iter().enumerate() {
        let up: Vec<f64> = row.iter().map(|t| t.upward.importance()).collect();
        let down: Vec<f64> = row.iter().map(|t| t.downward.importance()).collect();
        labels.push(ExplanationLabel::from_importances(
            instance.item_ids()[item].clone(),
            &up,
            &down,
            config.k,
        )?);
        mean_tau.push(row.iter().map(|t| t.all.mean()).collect());
    }
    Ok(InstanceExplanation { labels, mean_tau })
}

fn check_values(instance: &RankingInstance, values: &[Vec<f64>]) -> Result<()> {
    if instance.n_items() > 0 && values.len() != instance.n_features() {
        return Err(ListenError::Configuration(format!(
            "perturbation values cover {} features, instance has {}",
            values.len(),
            instance.n_features()
        )));
    }
    if let Some(v) = values.iter().flatten().find(|v| !v.is_finite()) {
        return Err(ListenError::Configuration(format!("perturbation value {v} is not finite")));
    }
    Ok(())
}

/// Explains every item of `instance` using perturbation values per feature.
pub fn explain_with_values<M: ScoringModel + ?Sized>(
    instance: &RankingInstance,
    model: &M,
    values: &[Vec<f64>],
    config: &ExplainConfig,
) -> Result<InstanceExplanation> {
    config.validate()?;
    check_arity(model, instance)?;
    check_values(instance, values)?;
    if instance.n_items() == 0 {
        return Ok(InstanceExplanation {
            labels: Vec::new(),
            mean_tau: Vec::new(),
        });
    }
    // Validates the base scores once up front.
    Perturber::new(model, instance)?;

    let tallies = (0..instance.n_items())
        .into_par_iter()
        .map(|item| {
            let mut perturber = Perturber::new(model, instance)?;
            let mut row = vec![FeatureTally::default(); values.len()];
            for (feature, (tally, feature_values)) in row.iter_mut().zip(values).enumerate() {
                let current = instance.value(item, feature);
                for &v in feature_values {
                    if v != current {
                        tally.record(perturber.trial(item, feature, v)?);
                    }
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    finish(instance, tallies, config)
}

pub fn explain_instance<M: ScoringModel + ?Sized>(
    instance: &RankingInstance,
    model: &M,
    pois: &PointsOfInterest,
    config: &ExplainConfig,
) -> Result<Vec<ExplanationLabel>> {
    Ok(explain_instance_detailed(instance, model, pois, config)?.labels)
}

pub fn explain_instance_detailed<M: ScoringModel + ?Sized>(
    instance: &RankingInstance,
    model: &M,
    pois: &PointsOfInterest,
    config: &ExplainConfig,
) -> Result<InstanceExplanation> {
    if instance.n_items() > 0 && pois.features.len() != instance.n_features() {
        return Err(ListenError::Configuration(format!(
            "points of interest missing: cover {} of {} features",
            pois.features.len(),
            instance.n_features()
        )));
    }
    explain_with_values(instance, model, &pois.values(), config)
}

/// Brute-force explainer over full uniform grids on the given domains.
///
/// Uses only the public single-step operations (copying perturbation,
/// fresh scoring, full ranking) so it stays independent of the optimized
/// sweep in [`explain_with_values`].
pub fn oracle_explain<M: ScoringModel + ?Sized>(
    instance: &RankingInstance,
    model: &M,
    domains: &[Bounds],
    grid_step: f64,
    config: &ExplainConfig,
) -> Result<Vec<ExplanationLabel>> {
    Ok(oracle_explain_detailed(instance, model, domains, grid_step, config)?.labels)
}

pub fn oracle_explain_detailed<M: ScoringModel + ?Sized>(
    instance: &RankingInstance,
    model: &M,
    domains: &[Bounds],
    grid_step: f64,
    config: &ExplainConfig,
) -> Result<InstanceExplanation> {
    config.validate()?;
    let grids: Vec<Vec<f64>> = domains
        .iter()
        .map(|b| grid(b.min, b.max, grid_step))
        .collect::<Result<_>>()?;
    check_values(instance, &grids)?;
    let reference = rank(score_all(model, instance)?)?;

    let mut tallies = Vec::with_capacity(instance.n_items());
    for item in 0..instance.n_items() {
        let mut row = vec![FeatureTally::default(); grids.len()];
        for (feature, values) in grids.iter().enumerate() {
            for &v in values {
                if v == instance.value(item, feature) {
                    continue;
                }
                let perturbed = perturb(instance, item, feature, v)?;
                let ranking = rank(score_all(model, &perturbed)?)?;
                row[feature].record(Trial {
                    tau: tau_ap(&ranking, &reference)?.value(),
                    old_score: reference.scores[item],
                    new_score: ranking.scores[item],
                });
            }
        }
        tallies.push(row);
    }
    finish(instance, tallies, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::LinearScoringModel;

    #[test]
    fn normalize_examples() {
        let v = normalize_label(&[0.2, 0.2, 0.1]).unwrap();
        for (a, b) in v.iter().zip([0.4, 0.4, 0.2]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(normalize_label(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(normalize_label(&[0.5]).unwrap(), vec![1.0]);
        assert!(matches!(normalize_label(&[0.1, -0.1]), Err(ListenError::Domain(_))));
    }

    #[test]
    fn top_k_orders_and_breaks_ties() {
        let top = select_top_k(&[0.1, 0.3, 0.1, 0.0, 0.3], 3).unwrap();
        let features: Vec<usize> = top.iter().map(|w| w.feature).collect();
        assert_eq!(features, vec![1, 4, 0]);
        let sum: f64 = top.iter().map(|w| w.weight).sum();
        assert!((sum - 1.0).abs() < 1e-12);

        assert_eq!(select_top_k(&[0.4, 0.2], 5).unwrap().len(), 2);
    }

    #[test]
    fn most_disruptive_ignores_undisrupted() {
        assert_eq!(most_disruptive(&[Some(1.0), Some(0.83), Some(1.0)]), Some(1));
        assert_eq!(most_disruptive(&[Some(1.0), None, Some(1.0)]), None);
        assert_eq!(most_disruptive(&[Some(0.5), Some(0.5)]), Some(0));
    }

    #[test]
    fn constant_model_explains_nothing() {
        let inst = RankingInstance::with_default_ids(
            "u",
            vec![vec![1.0, 1.0, 1.0], vec![0.5, 0.5, 1.0], vec![1.0, 0.0, 0.7]],
        )
        .unwrap();
        let model = LinearScoringModel::new(vec![0.0; 3]);
        let values = vec![vec![0.0, 0.5, 1.0]; 3];
        let out = explain_with_values(&inst, &model, &values, &ExplainConfig::default()).unwrap();
        for label in &out.labels {
            assert!(label.upward.iter().chain(&label.downward).all(|f| f.importance == 0.0));
            assert!(label.top_k.iter().all(|w| w.weight == 0.0));
            assert_eq!(label.top_feature(), None);
        }
    }

    #[test]
    fn grid_equal_to_current_values_skips_every_trial() {
        let inst = RankingInstance::with_default_ids("u", vec![vec![0.5], vec![0.5]]).unwrap();
        let model = LinearScoringModel::new(vec![1.0]);
        let domains = [Bounds { min: 0.5, max: 0.5 }];
        let out = oracle_explain_detailed(&inst, &model, &domains, 0.01, &ExplainConfig::default()).unwrap();
        assert_eq!(out.mean_tau, vec![vec![None], vec![None]]);
        for label in out.labels {
            assert_eq!(label.upward[0].importance, 0.0);
            assert_eq!(label.downward[0].importance, 0.0);
        }
    }

    #[test]
    fn missing_points_of_interest_is_a_configuration_error() {
        let inst = RankingInstance::with_default_ids("u", vec![vec![0.5, 0.1], vec![0.2, 0.3]]).unwrap();
        let model = LinearScoringModel::new(vec![1.0, 1.0]);
        let catalog = crate::ranking::FeatureCatalog::continuous(1).unwrap();
        let pois = PointsOfInterest::from_values(&catalog, vec![vec![0.0]]).unwrap();
        assert!(matches!(
            explain_instance(&inst, &model, &pois, &ExplainConfig::default()),
            Err(ListenError::Configuration(_))
        ));
    }

    #[test]
    fn singleton_list_has_zero_importance() {
        let inst = RankingInstance::with_default_ids("u", vec![vec![0.5, 0.1]]).unwrap();
        let model = LinearScoringModel::new(vec![1.0, 1.0]);
        let out = explain_with_values(&inst, &model, &[vec![0.0, 1.0], vec![0.0, 1.0]], &ExplainConfig::default())
            .unwrap();
        assert_eq!(out.labels[0].upward_importances(), vec![0.0, 0.0]);
    }

    #[test]
    fn agreement_counts() {
        assert_eq!(top1_agreement(&[Some(1), Some(2)], &[Some(1), Some(2)]).unwrap(), 1.0);
        assert_eq!(top1_agreement(&[Some(0), None], &[Some(1), Some(2)]).unwrap(), 0.0);
        let a = top1_agreement(&[Some(0), Some(1), Some(2), Some(0)], &[Some(0), Some(1), Some(0), None]).unwrap();
        assert!((a - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(top1_agreement(&[Some(0)], &[None]), Err(ListenError::UndefinedAccuracy)));
        assert!(matches!(top1_agreement(&[Some(0)], &[]), Err(ListenError::Alignment(_))));
    }

    #[test]
    fn rejects_zero_k() {
        assert!(ExplainConfig { k: 0 }.validate().is_err());
    }
}
