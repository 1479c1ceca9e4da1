use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{split_by_instance, DistillDataset, Split};
use super::network::DistilledModel;
use super::DistillConfig;
use crate::error::{ListenError, Result};
use crate::explain::{top1_agreement, ExplainConfig, ExplanationLabel};
use crate::ranking::RankingInstance;
use crate::synthetic::derive_seed;

const SPLIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch loss (data + penalty) before each update.
    pub loss_curve: Vec<f64>,
    pub split: Split,
    /// `None` when the partition has no item with a non-zero reference label.
    pub validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distilled {
    pub model: DistilledModel,
    pub report: TrainReport,
}

/// Runs `model.config.iterations` Adam steps on minibatches drawn from
/// `train_set` without replacement, reshuffling at every epoch boundary.
pub fn train(model: &mut DistilledModel, train_set: &DistillDataset) -> Result<Vec<f64>> {
    let config = model.config.clone();
    if train_set.n_features != config.n_features || train_set.ranking_length != config.ranking_length {
        return Err(ListenError::Dimension {
            context: "dataset cells per instance".to_string(),
            expected: config.io_dim(),
            actual: train_set.ranking_length * train_set.n_features,
        });
    }
    if config.iterations == 0 {
        return Ok(Vec::new());
    }
    if train_set.is_empty() {
        return Err(ListenError::EmptyInput("training partition is empty".to_string()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[SHUFFLE_STREAM]));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[DROPOUT_STREAM]));
    let width = config.io_dim();
    let batch = config.batch_size;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let mut inputs = Vec::with_capacity(batch * width);
    let mut targets = Vec::with_capacity(batch * width);
    let mut masks = Vec::with_capacity(batch * width);
    let mut curve = Vec::with_capacity(config.iterations as usize);
    for _ in 0..config.iterations {
        inputs.clear();
        targets.clear();
        masks.clear();
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            inputs.extend_from_slice(&train_set.inputs[i]);
            targets.extend_from_slice(&train_set.targets[i]);
            masks.extend(train_set.masks[i].iter().map(|&m| f64::from(u8::from(m))));
        }
        let loss = model.train_step(&inputs, &targets, &masks, batch, &mut dropout_rng)?;
        curve.push(loss.total());
    }
    Ok(curve)
}

/// Splits `dataset` by instance, initializes a network from `config`, trains
/// it on the training partition and scores the held-out partitions.
pub fn fit(config: &DistillConfig, dataset: &DistillDataset) -> Result<Distilled> {
    let mut model = DistilledModel::init(config)?;
    let split = split_by_instance(dataset.len(), derive_seed(config.seed, &[SPLIT_STREAM]));
    let loss_curve = train(&mut model, &dataset.subset(&split.train))?;
    let score = |indices: &[usize]| match dataset_accuracy(&model, &dataset.subset(indices)) {
        Ok(a) => Ok(Some(a)),
        Err(ListenError::UndefinedAccuracy) => Ok(None),
        Err(e) => Err(e),
    };
    let validation_accuracy = score(&split.validation)?;
    let test_accuracy = score(&split.test)?;
    Ok(Distilled {
        model,
        report: TrainReport {
            loss_curve,
            split,
            validation_accuracy,
            test_accuracy,
        },
    })
}

/// Labels the first `ranking_length` items of `instance` from the network's
/// output. Negative outputs are clamped to zero; `downward` is left empty
/// since the network only learns upward importances.
pub fn predict(model: &DistilledModel, instance: &RankingInstance, config: &ExplainConfig) -> Result<Vec<ExplanationLabel>> {
    config.validate()?;
    let n = model.config.n_features;
    if instance.n_features() != n {
        return Err(ListenError::Dimension {
            context: format!("features of instance {:?}", instance.user_id()),
            expected: n,
            actual: instance.n_features(),
        });
    }
    let kept = instance.n_items().min(model.config.ranking_length);
    let mut input = vec![0.0; model.config.io_dim()];
    input[..kept * n].copy_from_slice(&instance.values()[..kept * n]);
    let mut output = model.infer(&input)?;
    for v in &mut output {
        *v = v.max(0.0);
    }
    (0..kept)
        .map(|item| {
            ExplanationLabel::from_importances(
                instance.item_ids()[item].clone(),
                &output[item * n..(item + 1) * n],
                &[],
                config.k,
            )
        })
        .collect()
}

/// Top-1 agreement between predicted and reference labels, skipping items
/// whose reference has no positive importance.
pub fn accuracy(predicted: &[ExplanationLabel], reference: &[ExplanationLabel]) -> Result<f64> {
    let top = |labels: &[ExplanationLabel]| labels.iter().map(ExplanationLabel::top_feature).collect::<Vec<_>>();
    top1_agreement(&top(predicted), &top(reference))
}

/// Top-1 agreement of the network against the targets of every real item in
/// `dataset`.
pub fn dataset_accuracy(model: &DistilledModel, dataset: &DistillDataset) -> Result<f64> {
    let n = dataset.n_features;
    let mut predicted = Vec::new();
    let mut reference = Vec::new();
    for i in 0..dataset.len() {
        let output = model.infer(&dataset.inputs[i])?;
        for item in 0..dataset.real_items(i) {
            let cells = item * n..(item + 1) * n;
            let clamped: Vec<f64> = output[cells.clone()].iter().map(|&v| v.max(0.0)).collect();
            let label = |upward: &[f64]| ExplanationLabel::from_importances("", upward, &[], 1).map(|l| l.top_feature());
            predicted.push(label(&clamped)?);
            reference.push(label(&dataset.targets[i][cells])?);
        }
    }
    top1_agreement(&predicted, &reference)
}
