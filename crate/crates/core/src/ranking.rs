//! Features, ranking instances and scoring.
//!
//! A [`RankingInstance`] is one user's candidate list: `d` items, each a
//! feature vector of length `n`. Any [`ScoringModel`] maps a feature vector to
//! a real score; the [`Ranking`] is the stable descending sort of those scores.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{ListenError, Result};

/// Default cap on distinct integers enumerated for a discrete feature.
pub const DEFAULT_DISCRETE_BOUND: usize = 100;

fn default_discrete_bound() -> usize {
    DEFAULT_DISCRETE_BOUND
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Discrete,
    Predefined,
}

/// Describes how one feature is sampled during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predefined_values: Option<Vec<f64>>,
    /// Largest number of distinct integers enumerated before the range is
    /// split into equal intervals instead.
    #[serde(default = "default_discrete_bound")]
    pub discrete_bound: usize,
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Continuous,
            predefined_values: None,
            discrete_bound: DEFAULT_DISCRETE_BOUND,
        }
    }

    pub fn discrete(name: impl Into<String>, discrete_bound: usize) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Discrete,
            predefined_values: None,
            discrete_bound,
        }
    }

    pub fn predefined(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Predefined,
            predefined_values: Some(values),
            discrete_bound: DEFAULT_DISCRETE_BOUND,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.discrete_bound == 0 {
            return Err(ListenError::Configuration(format!(
                "feature '{}': discrete_bound must be at least 1",
                self.name
            )));
        }
        match (self.kind, &self.predefined_values) {
            (FeatureKind::Predefined, None) => Err(ListenError::Configuration(format!(
                "feature '{}': predefined feature without predefined_values",
                self.name
            ))),
            (FeatureKind::Predefined, Some(values)) => {
                if values.is_empty() {
                    return Err(ListenError::Configuration(format!(
                        "feature '{}': predefined_values is empty",
                        self.name
                    )));
                }
                if values.iter().any(|v| !v.is_finite())
                    || values.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(ListenError::Configuration(format!(
                        "feature '{}': predefined_values must be finite and strictly increasing",
                        self.name
                    )));
                }
                Ok(())
            }
            (_, Some(_)) => Err(ListenError::Configuration(format!(
                "feature '{}': predefined_values given for a non-predefined feature",
                self.name
            ))),
            (_, None) => Ok(()),
        }
    }
}

/// Ordered feature specifications; position is the feature index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct FeatureCatalog {
    specs: Vec<FeatureSpec>,
}

#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    features: Vec<FeatureSpec>,
}

impl TryFrom<CatalogRepr> for FeatureCatalog {
    type Error = ListenError;

    fn try_from(repr: CatalogRepr) -> Result<Self> {
        FeatureCatalog::new(repr.features)
    }
}

impl From<FeatureCatalog> for CatalogRepr {
    fn from(catalog: FeatureCatalog) -> Self {
        CatalogRepr {
            features: catalog.specs,
        }
    }
}

impl FeatureCatalog {
    pub fn new(specs: Vec<FeatureSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(ListenError::Configuration(
                "feature catalog is empty".to_string(),
            ));
        }
        let mut seen = HashSet::new();
        for spec in &specs {
            spec.validate()?;
            if !seen.insert(spec.name.as_str()) {
                return Err(ListenError::Configuration(format!(
                    "duplicate feature name '{}'",
                    spec.name
                )));
            }
        }
        Ok(Self { specs })
    }

    /// Catalog of continuous features named `x_0 .. x_{n-1}`.
    pub fn continuous(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| FeatureSpec::continuous(format!("x_{i}"))).collect())
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&FeatureSpec> {
        self.specs.get(index)
    }
}

/// One user's candidate list with its dense `d × n` feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRepr", into = "InstanceRepr")]
pub struct RankingInstance {
    user_id: String,
    item_ids: Vec<String>,
    n_features: usize,
    // row-major, item i occupies [i * n_features, (i + 1) * n_features)
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    user_id: String,
    item_ids: Vec<String>,
    features: Vec<Vec<f64>>,
}

impl TryFrom<InstanceRepr> for RankingInstance {
    type Error = ListenError;

    fn try_from(repr: InstanceRepr) -> Result<Self> {
        RankingInstance::new(repr.user_id, repr.item_ids, repr.features)
    }
}

impl From<RankingInstance> for InstanceRepr {
    fn from(instance: RankingInstance) -> Self {
        let features = instance.rows().map(<[f64]>::to_vec).collect();
        InstanceRepr {
            user_id: instance.user_id,
            item_ids: instance.item_ids,
            features,
        }
    }
}

impl RankingInstance {
    pub fn new(
        user_id: impl Into<String>,
        item_ids: Vec<String>,
        features: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n_features = features.first().map_or(0, Vec::len);
        if let Some((row, r)) = features
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != n_features)
        {
            return Err(ListenError::Dimension {
                context: format!("feature row {row}"),
                expected: n_features,
                actual: r.len(),
            });
        }
        Self::from_flat(user_id, item_ids, n_features, features.concat())
    }

    /// Builds an instance from a row-major value buffer.
    pub fn from_flat(
        user_id: impl Into<String>,
        item_ids: Vec<String>,
        n_features: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let user_id = user_id.into();
        if values.len() != item_ids.len() * n_features {
            return Err(ListenError::Dimension {
                context: format!("feature matrix of user '{user_id}'"),
                expected: item_ids.len() * n_features,
                actual: values.len(),
            });
        }
        if !item_ids.is_empty() && n_features == 0 {
            return Err(ListenError::Validation(format!(
                "user '{user_id}': items without features"
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(ListenError::Validation(format!(
                "user '{user_id}': non-finite value at item {}, feature {}",
                pos / n_features,
                pos % n_features
            )));
        }
        let mut seen = HashSet::new();
        for id in &item_ids {
            if !seen.insert(id.as_str()) {
                return Err(ListenError::Validation(format!(
                    "user '{user_id}': duplicate item id '{id}'"
                )));
            }
        }
        Ok(Self {
            user_id,
            item_ids,
            n_features,
            values,
        })
    }

    /// Instance with item ids `d_0 .. d_{d-1}`.
    pub fn with_default_ids(user_id: impl Into<String>, features: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..features.len()).map(|i| format!("d_{i}")).collect();
        Self::new(user_id, ids, features)
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, item: usize) -> &[f64] {
        &self.values[item * self.n_features..(item + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.values.chunks_exact(self.n_features.max(1))
    }

    pub fn value(&self, item: usize, feature: usize) -> f64 {
        self.values[item * self.n_features + feature]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Copy with item rows permuted: row `i` of the result is row `order[i]`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.n_items())?;
        let mut values = Vec::with_capacity(self.values.len());
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        Ok(Self {
            user_id: self.user_id.clone(),
            item_ids: order.iter().map(|&i| self.item_ids[i].clone()).collect(),
            n_features: self.n_features,
            values,
        })
    }
}

fn check_permutation(order: &[usize], len: usize) -> Result<()> {
    if order.len() != len {
        return Err(ListenError::Dimension {
            context: "permutation".to_string(),
            expected: len,
            actual: order.len(),
        });
    }
    let mut seen = vec![false; len];
    for &i in order {
        if i >= len || std::mem::replace(&mut seen[i], true) {
            return Err(ListenError::Domain(format!(
                "{order:?} is not a permutation of 0..{len}"
            )));
        }
    }
    Ok(())
}

/// A pure scoring function over feature vectors.
///
/// Implementations must be deterministic; explanation sweeps call `score`
/// from many threads at once.
pub trait ScoringModel: Send + Sync {
    /// Expected feature-vector length.
    fn arity(&self) -> usize;

    fn score(&self, features: &[f64]) -> f64;
}

impl<M: ScoringModel + ?Sized> ScoringModel for &M {
    fn arity(&self) -> usize {
        (**self).arity()
    }

    fn score(&self, features: &[f64]) -> f64 {
        (**self).score(features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScoringModel {
    pub weights: Vec<f64>,
}

impl LinearScoringModel {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }
}

impl ScoringModel for LinearScoringModel {
    fn arity(&self) -> usize {
        self.weights.len()
    }

    fn score(&self, features: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(features)
            .fold(0.0, |acc, (w, x)| acc + w * x)
    }
}

/// Adapts a closure into a [`ScoringModel`].
pub struct FnScoringModel<F> {
    arity: usize,
    f: F,
}

impl<F> FnScoringModel<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(arity: usize, f: F) -> Self {
        Self { arity, f }
    }
}

impl<F> ScoringModel for FnScoringModel<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn arity(&self) -> usize {
        self.arity
    }

    fn score(&self, features: &[f64]) -> f64 {
        (self.f)(features)
    }
}

/// Items sorted by descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// `order[p]` is the item index at position `p`.
    pub order: Vec<usize>,
    /// Scores indexed by item.
    pub scores: Vec<f64>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Inverse of `order`: `positions()[item]` is that item's position.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (p, &item) in self.order.iter().enumerate() {
            pos[item] = p;
        }
        pos
    }
}

pub fn score_all<M: ScoringModel + ?Sized>(model: &M, instance: &RankingInstance) -> Result<Vec<f64>> {
    check_arity(model, instance)?;
    Ok(instance.rows().take(instance.n_items()).map(|r| model.score(r)).collect())
}

pub(crate) fn check_arity<M: ScoringModel + ?Sized>(model: &M, instance: &RankingInstance) -> Result<()> {
    if instance.n_items() > 0 && model.arity() != instance.n_features() {
        return Err(ListenError::Dimension {
            context: format!("scoring model arity for user '{}'", instance.user_id()),
            expected: model.arity(),
            actual: instance.n_features(),
        });
    }
    Ok(())
}

/// Stable descending sort; equal scores keep ascending item index.
pub fn rank(scores: Vec<f64>) -> Result<Ranking> {
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
        return Err(ListenError::InvalidScore { index, value });
    }
    let mut order = Vec::with_capacity(scores.len());
    rank_into(&scores, &mut order);
    Ok(Ranking { order, scores })
}

/// Fills `order` with the ranking of finite `scores`.
pub(crate) fn rank_into(scores: &[f64], order: &mut Vec<usize>) {
    order.clear();
    order.extend(0..scores.len());
    order.sort_unstable_by(|&a, &b| descending(scores[a], scores[b]).then(a.cmp(&b)));
}

fn descending(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Copy of `instance` with the single cell `(item, feature)` set to `value`.
pub fn perturb(
    instance: &RankingInstance,
    item: usize,
    feature: usize,
    value: f64,
) -> Result<RankingInstance> {
    if item >= instance.n_items() {
        return Err(ListenError::Index {
            what: "item",
            index: item,
            len: instance.n_items(),
        });
    }
    if feature >= instance.n_features() {
        return Err(ListenError::Index {
            what: "feature",
            index: feature,
            len: instance.n_features(),
        });
    }
    if !value.is_finite() {
        return Err(ListenError::Domain(format!("perturbation value {value} is not finite")));
    }
    let mut out = instance.clone();
    let n = out.n_features;
    out.values[item * n + feature] = value;
    Ok(out)
}
