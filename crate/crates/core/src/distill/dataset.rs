use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ListenError, Result};
use crate::explain::ExplanationLabel;
use crate::ranking::RankingInstance;

/// Flattened network inputs, raw upward-importance targets and cell masks,
/// one entry per ranking instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillDataset {
    pub ranking_length: usize,
    pub n_features: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    /// `true` on cells that belong to a real item.
    pub masks: Vec<Vec<bool>>,
}

impl DistillDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Number of real items in entry `i`.
    pub fn real_items(&self, i: usize) -> usize {
        self.masks[i].chunks(self.n_features).take_while(|row| row[0]).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let pick = |v: &Vec<Vec<_>>| indices.iter().map(|&i| v[i].clone()).collect();
        Self {
            ranking_length: self.ranking_length,
            n_features: self.n_features,
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
            masks: indices.iter().map(|&i| self.masks[i].clone()).collect(),
        }
    }
}

/// Pairs every instance with its explanation labels. Instances shorter than
/// `ranking_length` are zero-padded; longer ones keep their first
/// `ranking_length` items.
pub fn build_dataset(
    corpus: &[RankingInstance],
    labels: &[Vec<ExplanationLabel>],
    ranking_length: usize,
) -> Result<DistillDataset> {
    if ranking_length == 0 {
        return Err(ListenError::Configuration("ranking_length must be positive".to_string()));
    }
    if corpus.len() != labels.len() {
        return Err(ListenError::Alignment(format!(
            "{} instances vs {} label sets",
            corpus.len(),
            labels.len()
        )));
    }
    let n_features = corpus.first().map_or(0, RankingInstance::n_features);
    let width = ranking_length * n_features;
    let mut dataset = DistillDataset {
        ranking_length,
        n_features,
        inputs: Vec::with_capacity(corpus.len()),
        targets: Vec::with_capacity(corpus.len()),
        masks: Vec::with_capacity(corpus.len()),
    };
    for (index, (instance, item_labels)) in corpus.iter().zip(labels).enumerate() {
        if instance.n_features() != n_features {
            return Err(ListenError::Dimension {
                context: format!("features of instance {index}"),
                expected: n_features,
                actual: instance.n_features(),
            });
        }
        if item_labels.len() != instance.n_items() {
            return Err(ListenError::Alignment(format!(
                "instance {index} has {} items but {} labels",
                instance.n_items(),
                item_labels.len()
            )));
        }
        let kept = instance.n_items().min(ranking_length);
        let mut input = vec![0.0; width];
        let mut target = vec![0.0; width];
        let mut mask = vec![false; width];
        for item in 0..kept {
            let label = &item_labels[item];
            if label.item_id != instance.item_ids()[item] {
                return Err(ListenError::Alignment(format!(
                    "instance {index} item {item} is {:?} but its label is for {:?}",
                    instance.item_ids()[item],
                    label.item_id
                )));
            }
            if label.upward.len() != n_features {
                return Err(ListenError::Dimension {
                    context: format!("upward importances of instance {index} item {item}"),
                    expected: n_features,
                    actual: label.upward.len(),
                });
            }
            let cells = item * n_features..(item + 1) * n_features;
            input[cells.clone()].copy_from_slice(instance.row(item));
            target[cells.clone()].copy_from_slice(&label.upward_importances());
            mask[cells].iter_mut().for_each(|m| *m = true);
        }
        dataset.inputs.push(input);
        dataset.targets.push(target);
        dataset.masks.push(mask);
    }
    Ok(dataset)
}

/// Instance indices of a train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 80/10/10 partition of `n` instances. Validation and test each get
/// `floor(n / 10)` instances, the rest train.
pub fn split_by_instance(n: usize, seed: u64) -> Split {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = n / 10;
    let test = order.split_off(n - held);
    let validation = order.split_off(n - 2 * held);
    Split {
        train: order,
        validation,
        test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::oracle_explain;
    use crate::synthetic::{worked_example_domains, worked_example_instance, worked_example_model};

    fn labels_for(instance: &RankingInstance, upward: &[Vec<f64>]) -> Vec<ExplanationLabel> {
        instance
            .item_ids()
            .iter()
            .zip(upward)
            .map(|(id, up)| ExplanationLabel::from_importances(id.clone(), up, &vec![0.0; up.len()], 3).unwrap())
            .collect()
    }

    #[test]
    fn exact_fit_has_full_mask() {
        let inst = RankingInstance::with_default_ids("u", vec![vec![1.0, 2.0, 3.0]; 3]).unwrap();
        let labels = labels_for(&inst, &vec![vec![0.1, 0.2, 0.3]; 3]);
        let ds = build_dataset(&[inst.clone()], &[labels], 3).unwrap();
        assert_eq!(ds.inputs[0], inst.values());
        assert_eq!(ds.targets[0].len(), 9);
        assert!(ds.masks[0].iter().all(|&m| m));
        assert_eq!(ds.real_items(0), 3);
    }

    #[test]
    fn short_instances_are_padded() {
        let inst = RankingInstance::with_default_ids("u", vec![vec![1.0, 2.0, 3.0]; 2]).unwrap();
        let labels = labels_for(&inst, &vec![vec![0.5, 0.0, 0.25]; 2]);
        let ds = build_dataset(&[inst], &[labels], 3).unwrap();
        assert!(ds.masks[0][..6].iter().all(|&m| m));
        assert!(ds.masks[0][6..].iter().all(|&m| !m));
        assert_eq!(&ds.inputs[0][6..], &[0.0; 3]);
        assert_eq!(&ds.targets[0][6..], &[0.0; 3]);
        assert_eq!(ds.real_items(0), 2);
    }

    #[test]
    fn long_instances_keep_leading_items() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 0.0]).collect();
        let inst = RankingInstance::with_default_ids("u", rows).unwrap();
        let labels = labels_for(&inst, &vec![vec![0.5, 0.1]; 4]);
        let ds = build_dataset(&[inst], &[labels], 2).unwrap();
        assert_eq!(ds.inputs[0], vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn worked_example_target_for_top_item() {
        let inst = worked_example_instance();
        let labels = oracle_explain(&inst, &worked_example_model(), &worked_example_domains(), 0.01, &Default::default())
            .unwrap();
        let ds = build_dataset(&[inst], &[labels], 3).unwrap();
        let d0 = &ds.targets[0][..3];
        assert!(d0[1] > 0.0);
        assert_eq!(d0[0], 0.0);
        assert_eq!(d0[2], 0.0);
    }

    #[test]
    fn misalignment_is_rejected() {
        let inst = RankingInstance::with_default_ids("u", vec![vec![1.0]; 2]).unwrap();
        let labels = labels_for(&inst, &[vec![0.5]]);
        assert!(matches!(
            build_dataset(&[inst.clone()], &[labels], 2),
            Err(ListenError::Alignment(_))
        ));
        assert!(matches!(build_dataset(&[inst], &[], 2), Err(ListenError::Alignment(_))));
        let a = RankingInstance::with_default_ids("a", vec![vec![1.0]]).unwrap();
        let b = RankingInstance::with_default_ids("b", vec![vec![1.0]]).unwrap();
        let mut wrong = labels_for(&b, &[vec![0.5]]);
        wrong[0].item_id = "other".to_string();
        assert!(matches!(build_dataset(&[a], &[wrong], 1), Err(ListenError::Alignment(_))));
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let s = split_by_instance(105, 3);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (85, 10, 10));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..105).collect::<Vec<_>>());
        assert_eq!(s, split_by_instance(105, 3));
        assert_ne!(s, split_by_instance(105, 4));
    }
}
