use std::time::Instant;

use anyhow::{ensure, Result};
use listen::distill::{predict, DistilledModel};
use listen::{explain_instance, ExplainConfig, PointsOfInterest, RankingInstance, ScoringModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub median_seconds: f64,
    pub p95_seconds: f64,
}

impl LatencySummary {
    /// Median (mean of the middle pair for even counts) and nearest-rank
    /// 95th percentile.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let rank = (0.95 * n as f64).ceil() as usize;
        Some(Self {
            samples: n,
            median_seconds: median,
            p95_seconds: sorted[rank.max(1) - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub items: usize,
    pub features: usize,
    pub warmup: usize,
    pub explain: LatencySummary,
    pub predict: LatencySummary,
    /// Median explain latency over median predict latency.
    pub speedup: f64,
}

fn time_runs(repeats: usize, warmup: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(samples)
}

/// Times the explainer and the distilled network on the same instance.
pub fn run_bench<M: ScoringModel + ?Sized>(
    instance: &RankingInstance,
    scorer: &M,
    pois: &PointsOfInterest,
    model: &DistilledModel,
    explain: &ExplainConfig,
    repeats: usize,
    warmup: usize,
) -> Result<BenchReport> {
    ensure!(repeats > 0, "repeats must be positive");
    let explain_samples = time_runs(repeats, warmup, || {
        std::hint::black_box(explain_instance(instance, scorer, pois, explain)?);
        Ok(())
    })?;
    let predict_samples = time_runs(repeats, warmup, || {
        std::hint::black_box(predict(model, instance, explain)?);
        Ok(())
    })?;
    let explain_summary = LatencySummary::from_samples(&explain_samples).expect("repeats > 0");
    let predict_summary = LatencySummary::from_samples(&predict_samples).expect("repeats > 0");
    Ok(BenchReport {
        items: instance.n_items(),
        features: instance.n_features(),
        warmup,
        explain: explain_summary,
        predict: predict_summary,
        speedup: explain_summary.median_seconds / predict_summary.median_seconds,
    })
}
