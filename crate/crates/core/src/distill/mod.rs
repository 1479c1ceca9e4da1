//! Distillation of the explainer into a feedforward network.
//!
//! The network maps a flattened, fixed-length ranking (`ranking_length`
//! items × `n_features`) to the raw upward importances of every cell. Shorter
//! rankings are zero-padded and masked out of the loss; longer ones are cut
//! to their first `ranking_length` items.

mod dataset;
mod network;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{ListenError, Result};

pub use dataset::{build_dataset, split_by_instance, DistillDataset, Split};
pub use network::{xavier_bound, AdamState, BatchLoss, DistilledModel, ForwardPass, Gradients, Layer, Mode};
pub use network::max_gradient_error;
pub use trainer::{accuracy, dataset_accuracy, fit, predict, train, Distilled, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub hidden_layers: usize,
    pub layer_width: usize,
    pub dropout_rate: f64,
    pub l2_coefficient: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Items per ranking seen by the network.
    pub ranking_length: usize,
    pub n_features: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            layer_width: 100,
            dropout_rate: 0.1,
            l2_coefficient: 1e-4,
            learning_rate: 2e-4,
            batch_size: 50,
            iterations: 6000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            ranking_length: 25,
            n_features: 9,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ListenError::Configuration(msg));
        for (name, value) in [
            ("hidden_layers", self.hidden_layers),
            ("layer_width", self.layer_width),
            ("batch_size", self.batch_size),
            ("ranking_length", self.ranking_length),
            ("n_features", self.n_features),
        ] {
            if value == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        for (name, value) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&value) {
                return bad(format!("{name} {value} outside [0, 1)"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.adam_epsilon > 0.0 && self.adam_epsilon.is_finite()) {
            return bad(format!("adam_epsilon {} must be positive", self.adam_epsilon));
        }
        if !(self.l2_coefficient >= 0.0 && self.l2_coefficient.is_finite()) {
            return bad(format!("l2_coefficient {} must be non-negative", self.l2_coefficient));
        }
        Ok(())
    }

    /// Width of the network input and output.
    pub fn io_dim(&self) -> usize {
        self.ranking_length * self.n_features
    }

    /// Input, hidden and output widths in order.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.io_dim()];
        dims.extend(std::iter::repeat(self.layer_width).take(self.hidden_layers));
        dims.push(self.io_dim());
        dims
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_training_regime() {
        let c = DistillConfig::default();
        assert_eq!((c.hidden_layers, c.layer_width, c.batch_size, c.iterations), (4, 100, 50, 6000));
        assert_eq!((c.dropout_rate, c.learning_rate), (0.1, 2e-4));
        assert_eq!((c.adam_beta1, c.adam_beta2, c.adam_epsilon), (0.9, 0.999, 1e-8));
        c.validate().unwrap();
    }

    #[test]
    fn layer_dims_wrap_hidden_stack() {
        let c = DistillConfig {
            ranking_length: 3,
            n_features: 3,
            layer_width: 4,
            ..Default::default()
        };
        assert_eq!(c.layer_dims(), vec![9, 4, 4, 4, 4, 9]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = DistillConfig::default();
        for c in [
            DistillConfig { dropout_rate: 1.0, ..base.clone() },
            DistillConfig { learning_rate: 0.0, ..base.clone() },
            DistillConfig { batch_size: 0, ..base.clone() },
            DistillConfig { l2_coefficient: -1.0, ..base.clone() },
            DistillConfig { adam_beta2: 1.0, ..base.clone() },
        ] {
            assert!(matches!(c.validate(), Err(ListenError::Configuration(_))));
        }
    }
}
