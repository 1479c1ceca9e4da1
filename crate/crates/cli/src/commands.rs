use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use listen::distill::{build_dataset, fit, predict, DistillConfig, TrainReport};
use listen::synthetic::{run_accuracy_grid, run_matrix_check_with_step};
use listen::{
    explain_instance, find_disruptiveness, find_min_max, select_points_of_interest, ExplainConfig, FeatureCatalog,
    LinearScoringModel, PointsOfInterest, SamplingConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::run_bench;
use crate::cli::{Command, Common, DistillArgs, EvalCommand, SamplingArgs};
use crate::formats::{
    explanation_records, group_labels, read_corpus, read_json, read_jsonl, read_model, write_json, write_jsonl,
    write_model, ExplanationRecord,
};
use crate::manifest::{RunManifest, SyntheticEcho};

pub const BOUNDS_FILE: &str = "bounds.json";
pub const TABLE_FILE: &str = "disruptiveness.json";
pub const POIS_FILE: &str = "pois.json";
pub const EXPLANATIONS_FILE: &str = "explanations.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const MATRIX_FILE: &str = "matrix.json";
pub const GRID_CSV_FILE: &str = "grid.csv";
pub const GRID_JSON_FILE: &str = "grid.json";
pub const BENCH_FILE: &str = "bench.json";

/// Written by `distill` next to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillMetrics {
    pub instances: usize,
    pub train_instances: usize,
    pub validation_instances: usize,
    pub test_instances: usize,
    pub final_loss: Option<f64>,
    pub report: TrainReport,
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::TrainPois {
            data,
            specs,
            scorer,
            sampling,
            common,
        } => with_workers("train-pois", &common, |m| train_pois(&data, &specs, &scorer, &sampling, &common, m)),
        Command::Explain {
            data,
            scorer,
            pois,
            k,
            common,
        } => with_workers("explain", &common, |m| explain(&data, &scorer, &pois, k, &common, m)),
        Command::Distill {
            data,
            labels,
            network,
            common,
        } => with_workers("distill", &common, |m| distill(&data, &labels, &network, &common, m)),
        Command::Predict { model, data, k, common } => {
            with_workers("predict", &common, |m| predict_cmd(&model, &data, k, &common, m))
        }
        Command::Eval { which } => match which {
            EvalCommand::Matrix { step, common } => with_workers("eval matrix", &common, |m| eval_matrix(step, &common, m)),
            EvalCommand::Grid {
                users,
                items,
                repetitions,
                common,
            } => with_workers("eval grid", &common, |m| eval_grid(&users, &items, repetitions, &common, m)),
        },
        Command::Bench {
            data,
            scorer,
            pois,
            model,
            instance,
            repeats,
            warmup,
            k,
            common,
        } => with_workers("bench", &common, |m| {
            let corpus = read_corpus(&data)?;
            let inst = corpus
                .get(instance)
                .ok_or_else(|| listen::ListenError::Index {
                    what: "ranking",
                    index: instance,
                    len: corpus.len(),
                })?;
            let scorer_model: LinearScoringModel = read_json(&scorer)?;
            let pois_value: PointsOfInterest = read_json(&pois)?;
            let network = read_model(&model)?;
            let explain = ExplainConfig { k };
            let report = m.time("bench", || {
                run_bench(inst, &scorer_model, &pois_value, &network, &explain, repeats, warmup)
            })?;
            let out = common.out.join(BENCH_FILE);
            write_json(&out, &report)?;
            m.input("data", &data)
                .input("scorer", &scorer)
                .input("pois", &pois)
                .input("model", &model)
                .output("bench", &out);
            m.explain = Some(explain);
            Ok(())
        }),
    }
}

/// Creates the output directory, runs `f` inside a pool of the requested
/// size and writes the manifest it fills in.
fn with_workers(name: &str, common: &Common, f: impl FnOnce(&mut RunManifest) -> Result<()> + Send) -> Result<()> {
    fs::create_dir_all(&common.out).with_context(|| format!("cannot create {}", common.out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.workers.unwrap_or(0))
        .build()
        .map_err(|e| anyhow!("cannot start worker pool: {e}"))?;
    let mut manifest = RunManifest::new(name, common.seed, pool.current_num_threads());
    pool.install(|| f(&mut manifest))?;
    manifest.write(&common.out)
}

fn train_pois(
    data: &Path,
    specs: &Path,
    scorer: &Path,
    args: &SamplingArgs,
    common: &Common,
    m: &mut RunManifest,
) -> Result<()> {
    let corpus = read_corpus(data)?;
    let catalog: FeatureCatalog = read_json(specs)?;
    let model: LinearScoringModel = read_json(scorer)?;
    let sampling = SamplingConfig {
        continuous_samples: args.samples,
        bin_size: args.bin_size,
        predefined_cap: args.predefined_cap,
        tau_bins: args.bins,
        grid_step: args.step,
    };
    sampling.validate()?;
    let bounds = m.time("find_min_max", || find_min_max(&corpus))?;
    let table = m.time("find_disruptiveness", || find_disruptiveness(&corpus, &model, &catalog, &sampling))?;
    let pois = m.time("select_points_of_interest", || select_points_of_interest(&table, &catalog, &sampling))?;

    let out = &common.out;
    write_json(&out.join(BOUNDS_FILE), &bounds)?;
    write_json(&out.join(TABLE_FILE), &table)?;
    write_json(&out.join(POIS_FILE), &pois)?;
    m.input("data", data)
        .input("specs", specs)
        .input("scorer", scorer)
        .output("bounds", &out.join(BOUNDS_FILE))
        .output("disruptiveness", &out.join(TABLE_FILE))
        .output("pois", &out.join(POIS_FILE));
    m.sampling = Some(sampling);
    Ok(())
}

fn explain(data: &Path, scorer: &Path, pois: &Path, k: usize, common: &Common, m: &mut RunManifest) -> Result<()> {
    let corpus = read_corpus(data)?;
    let model: LinearScoringModel = read_json(scorer)?;
    let pois_value: PointsOfInterest = read_json(pois)?;
    let config = ExplainConfig { k };
    config.validate()?;
    let labels = m.time("explain", || {
        corpus
            .par_iter()
            .map(|inst| explain_instance(inst, &model, &pois_value, &config))
            .collect::<listen::Result<Vec<_>>>()
    })?;
    let out = common.out.join(EXPLANATIONS_FILE);
    write_jsonl(&out, &explanation_records(&corpus, labels))?;
    m.input("data", data)
        .input("scorer", scorer)
        .input("pois", pois)
        .output("explanations", &out);
    m.explain = Some(config);
    Ok(())
}

fn distill(data: &Path, labels: &Path, args: &DistillArgs, common: &Common, m: &mut RunManifest) -> Result<()> {
    let corpus = read_corpus(data)?;
    if corpus.is_empty() {
        return Err(listen::ListenError::EmptyInput(format!("{} holds no rankings", data.display())).into());
    }
    let records: Vec<ExplanationRecord> = read_jsonl(labels)?;
    let grouped = group_labels(&corpus, records)?;
    let ranking_length = args
        .ranking_length
        .unwrap_or_else(|| corpus.iter().map(|i| i.n_items()).max().unwrap_or(0));
    let config = DistillConfig {
        hidden_layers: args.hidden_layers,
        layer_width: args.width,
        dropout_rate: args.dropout,
        l2_coefficient: args.l2,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        iterations: args.iterations,
        seed: common.seed,
        ranking_length,
        n_features: corpus[0].n_features(),
        ..DistillConfig::default()
    };
    config.validate()?;
    let dataset = m.time("build_dataset", || build_dataset(&corpus, &grouped, ranking_length))?;
    let distilled = m.time("train", || fit(&config, &dataset))?;
    let report = distilled.report;
    let metrics = DistillMetrics {
        instances: dataset.len(),
        train_instances: report.split.train.len(),
        validation_instances: report.split.validation.len(),
        test_instances: report.split.test.len(),
        final_loss: report.loss_curve.last().copied(),
        report,
    };
    let model_path = common.out.join(MODEL_FILE);
    let metrics_path = common.out.join(METRICS_FILE);
    write_model(&model_path, &distilled.model)?;
    write_json(&metrics_path, &metrics)?;
    m.input("data", data)
        .input("labels", labels)
        .output("model", &model_path)
        .output("metrics", &metrics_path);
    m.distill = Some(config);
    Ok(())
}

fn predict_cmd(model: &Path, data: &Path, k: usize, common: &Common, m: &mut RunManifest) -> Result<()> {
    let network = read_model(model)?;
    let corpus = read_corpus(data)?;
    let config = ExplainConfig { k };
    config.validate()?;
    let labels = m.time("predict", || {
        corpus
            .par_iter()
            .map(|inst| predict(&network, inst, &config))
            .collect::<listen::Result<Vec<_>>>()
    })?;
    let out = common.out.join(EXPLANATIONS_FILE);
    write_jsonl(&out, &explanation_records(&corpus, labels))?;
    m.input("model", model).input("data", data).output("explanations", &out);
    m.explain = Some(config);
    m.distill = Some(network.config);
    Ok(())
}

fn eval_matrix(step: f64, common: &Common, m: &mut RunManifest) -> Result<()> {
    let matrix = m.time("matrix", || run_matrix_check_with_step(step))?;
    let out = common.out.join(MATRIX_FILE);
    write_json(&out, &matrix)?;
    m.output("matrix", &out);
    m.synthetic = Some(SyntheticEcho {
        users_axis: Vec::new(),
        items_axis: Vec::new(),
        repetitions: 1,
        grid_step: step,
    });
    Ok(())
}

fn eval_grid(users: &[usize], items: &[usize], repetitions: usize, common: &Common, m: &mut RunManifest) -> Result<()> {
    let grid = m.time("grid", || run_accuracy_grid(users, items, repetitions, common.seed))?;
    let csv = common.out.join(GRID_CSV_FILE);
    let json = common.out.join(GRID_JSON_FILE);
    fs::write(&csv, grid.to_csv()).with_context(|| format!("cannot write {}", csv.display()))?;
    write_json(&json, &grid)?;
    m.output("grid_csv", &csv).output("grid", &json);
    m.sampling = Some(SamplingConfig::default());
    m.synthetic = Some(SyntheticEcho {
        users_axis: users.to_vec(),
        items_axis: items.to_vec(),
        repetitions,
        grid_step: 0.01,
    });
    Ok(())
}
