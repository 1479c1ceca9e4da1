//! Single-cell perturbation trials shared by the training sweep and the
//! explainer.

use crate::error::{ListenError, Result};
use crate::ranking::{rank_into, RankingInstance, ScoringModel};
use crate::tau::TauScratch;

/// Outcome of changing one cell and re-ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Trial {
    pub tau: f64,
    pub old_score: f64,
    pub new_score: f64,
}

/// Owns a working copy of an instance and the buffers needed to re-score and
/// re-rank it after each single-cell change. Every trial re-scores all items.
pub(crate) struct Perturber<'a, M: ScoringModel + ?Sized> {
    model: &'a M,
    work: RankingInstance,
    base_scores: Vec<f64>,
    ref_pos: Vec<usize>,
    scores: Vec<f64>,
    order: Vec<usize>,
    scratch: TauScratch,
}

impl<'a, M: ScoringModel + ?Sized> Perturber<'a, M> {
    /// `instance` must already be validated against the model arity.
    pub(crate) fn new(model: &'a M, instance: &RankingInstance) -> Result<Self> {
        let base_scores: Vec<f64> = instance.rows().take(instance.n_items()).map(|r| model.score(r)).collect();
        if let Some((index, &value)) = base_scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
            return Err(ListenError::InvalidScore { index, value });
        }
        let mut order = Vec::new();
        rank_into(&base_scores, &mut order);
        let mut ref_pos = vec![0; order.len()];
        for (p, &item) in order.iter().enumerate() {
            ref_pos[item] = p;
        }
        Ok(Self {
            model,
            work: instance.clone(),
            scores: base_scores.clone(),
            base_scores,
            ref_pos,
            order,
            scratch: TauScratch::default(),
        })
    }

    pub(crate) fn instance(&self) -> &RankingInstance {
        &self.work
    }

    /// Sets `(item, feature)` to `value`, re-scores, re-ranks and restores the
    /// cell. Fails when the model returns a non-finite score.
    pub(crate) fn trial(&mut self, item: usize, feature: usize, value: f64) -> Result<Trial> {
        let n = self.work.n_features();
        let cell = item * n + feature;
        let old = std::mem::replace(&mut self.work.values_mut()[cell], value);

        self.scores.clear();
        for row in self.work.rows().take(self.work.n_items()) {
            self.scores.push(self.model.score(row));
        }
        self.work.values_mut()[cell] = old;

        if let Some((index, &value)) = self.scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
            return Err(ListenError::InvalidScore { index, value });
        }
        rank_into(&self.scores, &mut self.order);
        let tau = self.scratch.compute(&self.order, &self.ref_pos);
        Ok(Trial {
            tau,
            old_score: self.base_scores[item],
            new_score: self.scores[item],
        })
    }
}
