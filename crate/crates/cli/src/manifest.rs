use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use listen::distill::DistillConfig;
use listen::{ExplainConfig, SamplingConfig};
use serde::{Deserialize, Serialize};

use crate::formats::write_json;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Grid-experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEcho {
    pub users_axis: Vec<usize>,
    pub items_axis: Vec<usize>,
    pub repetitions: usize,
    pub grid_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything needed to rerun a command, plus how long it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub workers: usize,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sampling: Option<SamplingConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub explain: Option<ExplainConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub distill: Option<DistillConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub synthetic: Option<SyntheticEcho>,
    pub timings: Vec<StageTiming>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, workers: usize) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            workers,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            sampling: None,
            explain: None,
            distill: None,
            synthetic: None,
            timings: Vec::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> &mut Self {
        self.inputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    pub fn output(&mut self, name: &str, path: &Path) -> &mut Self {
        self.outputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    /// Runs `f` and records its wall-clock time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let value = f();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        value
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}
