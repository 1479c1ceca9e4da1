use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "listen", version)]
#[command(about = "Listwise explanations for ranking functions and their distilled approximation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value = "0")]
    pub seed: u64,

    /// Worker threads; defaults to the available parallelism
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SamplingArgs {
    /// Grid points per continuous feature
    #[arg(long, default_value = "20")]
    pub samples: usize,

    /// Disruptiveness bins used to pick points of interest
    #[arg(long, default_value = "20")]
    pub bins: usize,

    /// Sample continuous features at every multiple of this step instead
    #[arg(long)]
    pub step: Option<f64>,

    /// Integers per interval for wide discrete features
    #[arg(long)]
    pub bin_size: Option<usize>,

    /// Most predefined values kept per feature
    #[arg(long, default_value = "20")]
    pub predefined_cap: usize,
}

#[derive(Args, Debug, Clone)]
pub struct DistillArgs {
    /// Items per ranking seen by the network; defaults to the longest ranking
    #[arg(long)]
    pub ranking_length: Option<usize>,

    #[arg(long, default_value = "6000")]
    pub iterations: u64,

    #[arg(long, default_value = "50")]
    pub batch_size: usize,

    #[arg(long, default_value = "0.0002")]
    pub learning_rate: f64,

    #[arg(long, default_value = "0.0001")]
    pub l2: f64,

    #[arg(long, default_value = "0.1")]
    pub dropout: f64,

    #[arg(long, default_value = "4")]
    pub hidden_layers: usize,

    #[arg(long, default_value = "100")]
    pub width: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn points of interest from a corpus
    TrainPois {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        specs: PathBuf,
        #[arg(long)]
        scorer: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Explain every item of every ranking using trained points of interest
    Explain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scorer: PathBuf,
        #[arg(long)]
        pois: PathBuf,
        #[arg(long, default_value = "3")]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train a network to reproduce explanations
    Distill {
        #[arg(long)]
        data: PathBuf,
        /// Explanations written by `explain` for the same corpus
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        network: DistillArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Explain rankings with a trained network
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "3")]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Faithfulness experiments on the three-item example
    Eval {
        #[command(subcommand)]
        which: EvalCommand,
    },
    /// Compare explainer and network latency on one ranking
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scorer: PathBuf,
        #[arg(long)]
        pois: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Index of the ranking in the data file
        #[arg(long, default_value = "0")]
        instance: usize,
        #[arg(long, default_value = "50")]
        repeats: usize,
        #[arg(long, default_value = "3")]
        warmup: usize,
        #[arg(long, default_value = "3")]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    /// Mean rank correlation per item and feature over the full value grid
    Matrix {
        #[arg(long, default_value = "0.01")]
        step: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Point-of-interest accuracy over corpus sizes
    Grid {
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,100")]
        users: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,40,60,80,100,120,150")]
        items: Vec<usize>,
        #[arg(long, default_value = "20")]
        repetitions: usize,
        #[command(flatten)]
        common: Common,
    },
}
