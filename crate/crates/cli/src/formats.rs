//! On-disk formats: JSON Lines corpora and explanations, JSON for everything
//! else.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use listen::distill::{DistillConfig, DistilledModel, Layer};
use listen::{ExplanationLabel, FeatureImportance, RankingInstance, WeightedFeature};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Version written into model files; loading rejects anything else.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A malformed input file.
#[derive(Debug, thiserror::Error)]
#[error("{path}:{line}: {message}")]
pub struct InputError {
    pub path: PathBuf,
    /// 1-based; 0 when the whole document is at fault.
    pub line: usize,
    pub message: String,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(file))
}

/// Reads one value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| InputError {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for v in values {
        serde_json::to_writer(&mut w, v)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| {
        InputError {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        }
        .into()
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_corpus(path: &Path) -> Result<Vec<RankingInstance>> {
    read_jsonl(path)
}

/// One explained item, as written by `explain` and `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplanationRecord {
    pub user_id: String,
    pub item_id: String,
    pub upward: Vec<FeatureImportance>,
    pub downward: Vec<FeatureImportance>,
    pub top_k: Vec<WeightedFeature>,
}

impl ExplanationRecord {
    pub fn new(user_id: &str, label: ExplanationLabel) -> Self {
        Self {
            user_id: user_id.to_string(),
            item_id: label.item_id,
            upward: label.upward,
            downward: label.downward,
            top_k: label.top_k,
        }
    }

    pub fn into_label(self) -> ExplanationLabel {
        ExplanationLabel {
            item_id: self.item_id,
            upward: self.upward,
            downward: self.downward,
            top_k: self.top_k,
        }
    }
}

pub fn explanation_records(instances: &[RankingInstance], labels: Vec<Vec<ExplanationLabel>>) -> Vec<ExplanationRecord> {
    instances
        .iter()
        .zip(labels)
        .flat_map(|(inst, item_labels)| {
            item_labels
                .into_iter()
                .map(move |l| ExplanationRecord::new(inst.user_id(), l))
        })
        .collect()
}

/// Regroups explanation records by instance, in corpus order. Every
/// instance must have exactly one record per item, in item order.
pub fn group_labels(
    instances: &[RankingInstance],
    records: Vec<ExplanationRecord>,
) -> Result<Vec<Vec<ExplanationLabel>>> {
    let mut records = records.into_iter();
    let mut grouped = Vec::with_capacity(instances.len());
    for inst in instances {
        let mut labels = Vec::with_capacity(inst.n_items());
        for item_id in inst.item_ids() {
            let record = records.next().ok_or_else(|| {
                listen::ListenError::Alignment(format!(
                    "no explanation for user {:?} item {item_id:?}",
                    inst.user_id()
                ))
            })?;
            if record.user_id != inst.user_id() || &record.item_id != item_id {
                return Err(listen::ListenError::Alignment(format!(
                    "expected explanation for user {:?} item {item_id:?}, found user {:?} item {:?}",
                    inst.user_id(),
                    record.user_id,
                    record.item_id
                ))
                .into());
            }
            labels.push(record.into_label());
        }
        grouped.push(labels);
    }
    if let Some(extra) = records.next() {
        return Err(listen::ListenError::Alignment(format!(
            "explanation for user {:?} item {:?} has no matching item",
            extra.user_id, extra.item_id
        ))
        .into());
    }
    Ok(grouped)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    seed: u64,
    config: DistillConfig,
    shapes: Vec<LayerShape>,
    step: u64,
    layers: Vec<Layer>,
    adam_first: Vec<Layer>,
    adam_second: Vec<Layer>,
}

pub fn write_model(path: &Path, model: &DistilledModel) -> Result<()> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        seed: model.config.seed,
        config: model.config.clone(),
        shapes: model
            .layers
            .iter()
            .map(|l| LayerShape {
                inputs: l.inputs,
                outputs: l.outputs,
            })
            .collect(),
        step: model.step,
        layers: model.layers.clone(),
        adam_first: model.optimizer.first.clone(),
        adam_second: model.optimizer.second.clone(),
    };
    write_json(path, &file)
}

pub fn read_model(path: &Path) -> Result<DistilledModel> {
    let file: ModelFile = read_json(path)?;
    let invalid = |message: String| InputError {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(invalid(format!(
            "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
            file.format_version
        ))
        .into());
    }
    let shapes_match = file.shapes.len() == file.layers.len()
        && file
            .shapes
            .iter()
            .zip(&file.layers)
            .all(|(s, l)| s.inputs == l.inputs && s.outputs == l.outputs);
    if !shapes_match || file.seed != file.config.seed {
        return Err(invalid("layer shapes or seed disagree with the stored layers".to_string()).into());
    }
    let model = DistilledModel {
        config: file.config,
        layers: file.layers,
        optimizer: listen::distill::AdamState {
            first: file.adam_first,
            second: file.adam_second,
        },
        step: file.step,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        fs::write(
            &path,
            "{\"user_id\":\"u\",\"item_ids\":[\"a\"],\"features\":[[1.0]]}\n\n{\"user_id\":3}\n",
        )
        .unwrap();
        let err = read_corpus(&path).unwrap_err();
        let input = err.downcast_ref::<InputError>().unwrap();
        assert_eq!(input.line, 3);
        assert!(err.to_string().contains("data.jsonl:3"));
    }

    #[test]
    fn model_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let config = DistillConfig {
            ranking_length: 2,
            n_features: 3,
            layer_width: 7,
            seed: 11,
            ..Default::default()
        };
        let model = DistilledModel::init(&config).unwrap();
        write_model(&path, &model).unwrap();
        assert_eq!(read_model(&path).unwrap(), model);
    }

    #[test]
    fn model_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let config = DistillConfig {
            ranking_length: 1,
            n_features: 1,
            layer_width: 2,
            hidden_layers: 1,
            ..Default::default()
        };
        write_model(&path, &DistilledModel::init(&config).unwrap()).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        fs::write(&path, text).unwrap();
        assert!(read_model(&path).unwrap_err().to_string().contains("format version 9"));
    }

    #[test]
    fn records_regroup_by_instance() {
        let a = RankingInstance::with_default_ids("a", vec![vec![1.0], vec![2.0]]).unwrap();
        let b = RankingInstance::with_default_ids("b", vec![vec![3.0]]).unwrap();
        let label = |id: &str| ExplanationLabel::from_importances(id, &[0.5], &[0.0], 3).unwrap();
        let labels = vec![vec![label("d_0"), label("d_1")], vec![label("d_0")]];
        let records = explanation_records(&[a.clone(), b.clone()], labels.clone());
        assert_eq!(records.len(), 3);
        assert_eq!(group_labels(&[a.clone(), b.clone()], records.clone()).unwrap(), labels);
        assert!(group_labels(&[a.clone()], records.clone()).is_err());
        assert!(group_labels(&[b, a], records).is_err());
    }
}
