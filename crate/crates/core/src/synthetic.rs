//! Synthetic corpora and faithfulness experiments on the three-item worked
//! example (`score = 0.2 x_0 + 0.3 x_1 + 0.5 x_2`).
//!
//! * [`run_matrix_check`] sweeps every feature of every item over its full
//!   domain at step 0.01 and reports the mean AP correlation per cell.
//! * [`run_accuracy_grid`] trains points of interest on random corpora of
//!   varying size and measures how often the explainer, restricted to those
//!   points, names the same most disruptive feature as the full sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::{build_dataset, fit, DistillConfig, Distilled};
use crate::error::{ListenError, Result};
use crate::explain::{
    explain_instance, explain_instance_detailed, oracle_explain_detailed, top1_agreement, ExplainConfig,
    ExplanationLabel, InstanceExplanation,
};
use crate::ranking::{rank, score_all, FeatureCatalog, LinearScoringModel, RankingInstance, ScoringModel};
use crate::train::{find_disruptiveness, grid, select_points_of_interest, Bounds, SamplingConfig};

pub const GRID_USERS_AXIS: [usize; 4] = [5, 10, 20, 100];
pub const GRID_ITEMS_AXIS: [usize; 9] = [5, 10, 20, 40, 60, 80, 100, 120, 150];
pub const DEFAULT_REPETITIONS: usize = 20;

/// Weights of the worked-example scorer.
pub const WORKED_WEIGHTS: [f64; 3] = [0.2, 0.3, 0.5];

pub fn worked_example_model() -> LinearScoringModel {
    LinearScoringModel::new(WORKED_WEIGHTS.to_vec())
}

/// `d_0 = (1, 1, 1)`, `d_1 = (0.5, 0.5, 1)`, `d_2 = (1, 0, 0.7)`.
pub fn worked_example_instance() -> RankingInstance {
    RankingInstance::with_default_ids(
        "worked-example",
        vec![vec![1.0, 1.0, 1.0], vec![0.5, 0.5, 1.0], vec![1.0, 0.0, 0.7]],
    )
    .expect("static fixture is valid")
}

/// `x_0, x_1 ∈ [0, 1]`, `x_2 ∈ [0.6, 1]`.
pub fn worked_example_domains() -> Vec<Bounds> {
    vec![
        Bounds { min: 0.0, max: 1.0 },
        Bounds { min: 0.0, max: 1.0 },
        Bounds { min: 0.6, max: 1.0 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub items_per_user: usize,
    pub grid_step: f64,
    pub domains: Vec<Bounds>,
    pub scorer: LinearScoringModel,
    pub seed: u64,
    pub repetitions: usize,
}

impl SyntheticConfig {
    /// Worked-example domains and scorer.
    pub fn worked_example(n_users: usize, items_per_user: usize, seed: u64) -> Self {
        Self {
            n_users,
            items_per_user,
            grid_step: 0.01,
            domains: worked_example_domains(),
            scorer: worked_example_model(),
            seed,
            repetitions: DEFAULT_REPETITIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.items_per_user == 0 || self.repetitions == 0 {
            return Err(ListenError::Configuration(
                "n_users, items_per_user and repetitions must be positive".to_string(),
            ));
        }
        if self.domains.is_empty() {
            return Err(ListenError::Configuration("no feature domains".to_string()));
        }
        if self.scorer.weights.len() != self.domains.len() {
            return Err(ListenError::Dimension {
                context: "scorer weights vs feature domains".to_string(),
                expected: self.domains.len(),
                actual: self.scorer.weights.len(),
            });
        }
        for b in &self.domains {
            grid(b.min, b.max, self.grid_step)?;
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; decorrelates derived seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for a labelled sub-task.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// `n_users` instances of `items_per_user` items with every value drawn
/// uniformly from its domain grid.
pub fn generate_corpus(config: &SyntheticConfig) -> Result<Vec<RankingInstance>> {
    config.validate()?;
    let grids: Vec<Vec<f64>> = config
        .domains
        .iter()
        .map(|b| grid(b.min, b.max, config.grid_step))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = grids.len();
    (0..config.n_users)
        .map(|u| {
            let mut values = Vec::with_capacity(config.items_per_user * n);
            for _ in 0..config.items_per_user {
                for g in &grids {
                    values.push(g[rng.gen_range(0..g.len())]);
                }
            }
            let ids = (0..config.items_per_user).map(|i| format!("d_{i}")).collect();
            RankingInstance::from_flat(format!("user_{u}"), ids, n, values)
        })
        .collect()
}

/// Mean AP correlation per `(item, feature)` of the worked example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCheck {
    pub items: Vec<String>,
    pub features: Vec<String>,
    pub grid_step: f64,
    pub mean_tau: Vec<Vec<Option<f64>>>,
    /// Most disruptive feature per item, if any.
    pub most_disruptive: Vec<Option<usize>>,
}

pub fn run_matrix_check() -> Result<MatrixCheck> {
    run_matrix_check_with_step(0.01)
}

pub fn run_matrix_check_with_step(grid_step: f64) -> Result<MatrixCheck> {
    let instance = worked_example_instance();
    let explained = oracle_explain_detailed(
        &instance,
        &worked_example_model(),
        &worked_example_domains(),
        grid_step,
        &ExplainConfig::default(),
    )?;
    Ok(MatrixCheck {
        items: instance.item_ids().to_vec(),
        features: (0..3).map(|f| format!("x_{f}")).collect(),
        grid_step,
        most_disruptive: (0..instance.n_items()).map(|i| explained.most_disruptive(i)).collect(),
        mean_tau: explained.mean_tau,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n_users: usize,
    pub items_per_user: usize,
    pub mean_accuracy: f64,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyGrid {
    pub users_axis: Vec<usize>,
    pub items_axis: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    /// Row-major over `users_axis × items_axis`.
    pub cells: Vec<GridCell>,
}

impl AccuracyGrid {
    pub fn cell(&self, n_users: usize, items_per_user: usize) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.n_users == n_users && c.items_per_user == items_per_user)
    }

    /// Mean over all cells.
    pub fn surface_mean(&self) -> f64 {
        self.cells.iter().map(|c| c.mean_accuracy).sum::<f64>() / self.cells.len() as f64
    }

    /// Users down the rows, items per user across the columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("users\\items");
        for items in &self.items_axis {
            out.push_str(&format!(",{items}"));
        }
        out.push('\n');
        for (r, users) in self.users_axis.iter().enumerate() {
            out.push_str(&users.to_string());
            for c in 0..self.items_axis.len() {
                let cell = &self.cells[r * self.items_axis.len() + c];
                out.push_str(&format!(",{}", cell.mean_accuracy));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains points of interest on `corpus` and scores explanations of the
/// worked example against the full-grid reference.
pub fn points_of_interest_accuracy(corpus: &[RankingInstance], reference: &InstanceExplanation) -> Result<f64> {
    let catalog = FeatureCatalog::continuous(WORKED_WEIGHTS.len())?;
    let model = worked_example_model();
    let sampling = SamplingConfig::default();
    let table = find_disruptiveness(corpus, &model, &catalog, &sampling)?;
    let pois = select_points_of_interest(&table, &catalog, &sampling)?;
    let instance = worked_example_instance();
    let explained = explain_instance_detailed(&instance, &model, &pois, &ExplainConfig::default())?;
    let predicted: Vec<Option<usize>> = (0..instance.n_items()).map(|i| explained.most_disruptive(i)).collect();
    let truth: Vec<Option<usize>> = (0..instance.n_items()).map(|i| reference.most_disruptive(i)).collect();
    top1_agreement(&predicted, &truth)
}

pub fn run_accuracy_grid(
    users_axis: &[usize],
    items_axis: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<AccuracyGrid> {
    if users_axis.is_empty() || items_axis.is_empty() {
        return Err(ListenError::Configuration("accuracy grid axes must be non-empty".to_string()));
    }
    if repetitions == 0 {
        return Err(ListenError::Configuration("repetitions must be positive".to_string()));
    }
    let reference = oracle_explain_detailed(
        &worked_example_instance(),
        &worked_example_model(),
        &worked_example_domains(),
        0.01,
        &ExplainConfig::default(),
    )?;

    let jobs: Vec<(usize, usize, usize)> = users_axis
        .iter()
        .flat_map(|&u| items_axis.iter().flat_map(move |&i| (0..repetitions).map(move |r| (u, i, r))))
        .collect();
    let accuracies: Vec<f64> = jobs
        .par_iter()
        .map(|&(users, items, rep)| {
            let config = SyntheticConfig::worked_example(
                users,
                items,
                derive_seed(seed, &[users as u64, items as u64, rep as u64]),
            );
            points_of_interest_accuracy(&generate_corpus(&config)?, &reference)
        })
        .collect::<Result<_>>()?;

    let cells = accuracies
        .chunks(repetitions)
        .zip(&jobs.iter().step_by(repetitions).collect::<Vec<_>>())
        .map(|(accs, &&(n_users, items_per_user, _))| GridCell {
            n_users,
            items_per_user,
            mean_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
            accuracies: accs.to_vec(),
        })
        .collect();
    Ok(AccuracyGrid {
        users_axis: users_axis.to_vec(),
        items_axis: items_axis.to_vec(),
        repetitions,
        seed,
        cells,
    })
}

/// Reorders every item list best-first under `model`.
pub fn rank_corpus<M: ScoringModel + ?Sized>(corpus: &[RankingInstance], model: &M) -> Result<Vec<RankingInstance>> {
    corpus
        .iter()
        .map(|inst| inst.reordered(&rank(score_all(model, inst)?)?.order))
        .collect()
}

/// Trains points of interest on `corpus` and explains every instance with
/// them.
pub fn label_corpus<M: ScoringModel + ?Sized>(
    corpus: &[RankingInstance],
    model: &M,
    catalog: &FeatureCatalog,
    sampling: &SamplingConfig,
    explain: &ExplainConfig,
) -> Result<Vec<Vec<ExplanationLabel>>> {
    let table = find_disruptiveness(corpus, model, catalog, sampling)?;
    let pois = select_points_of_interest(&table, catalog, sampling)?;
    corpus
        .par_iter()
        .map(|inst| explain_instance(inst, model, &pois, explain))
        .collect()
}

/// Generates a corpus from `synthetic`, ranks it under its scorer, labels it
/// with the explainer and distills the labels into a network.
pub fn run_distillation(synthetic: &SyntheticConfig, config: &DistillConfig) -> Result<Distilled> {
    let corpus = rank_corpus(&generate_corpus(synthetic)?, &synthetic.scorer)?;
    let catalog = FeatureCatalog::continuous(synthetic.domains.len())?;
    let labels = label_corpus(
        &corpus,
        &synthetic.scorer,
        &catalog,
        &SamplingConfig::default(),
        &ExplainConfig::default(),
    )?;
    fit(config, &build_dataset(&corpus, &labels, config.ranking_length)?)
}
