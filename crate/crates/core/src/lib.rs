//! Listwise explanations for ranking functions.
//!
//! The explainer treats a scoring function as a black box. It perturbs one
//! feature value of one item at a time, re-ranks the list, and measures how
//! far the new ranking moved with the AP rank correlation. A training pass
//! over a corpus picks a small set of disruptive values per feature (points
//! of interest); the explaining pass reuses those values to label every item
//! with the features that hold it in place. A small feedforward network can
//! then be distilled to reproduce those labels in well under a millisecond.

pub mod distill;
pub mod error;
pub mod explain;
mod perturbation;
pub mod ranking;
pub mod synthetic;
pub mod tau;
pub mod train;

pub use error::{ListenError, Result};
pub use explain::{
    explain_instance, explain_instance_detailed, explain_with_values, normalize_label, oracle_explain,
    oracle_explain_detailed, ExplainConfig, ExplanationLabel, FeatureImportance, InstanceExplanation,
    WeightedFeature,
};
pub use ranking::{
    perturb, rank, score_all, FeatureCatalog, FeatureKind, FeatureSpec, FnScoringModel, LinearScoringModel,
    Ranking, RankingInstance, ScoringModel,
};
pub use tau::{tau_ap, tau_ap_orders, TauAp};
pub use train::{
    disruptiveness_per_item, find_disruptiveness, find_min_max, grid, sample_range,
    select_points_of_interest, Bounds, DisruptivenessTable, FeatureBounds, PointsOfInterest, SamplingConfig,
};
