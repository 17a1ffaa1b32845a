//! The `kgx` command line.
//!
//! Each subcommand is a thin wrapper over library calls: machine-readable
//! results go to files, a short human summary goes to standard output.
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kgx_core::sysout::RankBasis;
use kgx_core::TieStrategy;
use kgx_kge::{Directions, FinetuneLoss, LossKind, ModelKind, OptimizerKind, Strategy};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    /// Exit code for an argument-parsing error; help and version requests succeed.
    pub fn usage_code(e: &clap::Error) -> u8 {
        match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "kgx", version, about = "Bucketized evaluation and debugging of knowledge-graph completion models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a system output (or convert a library rank dump) and store it
    Ingest(IngestArgs),
    /// Bucketized analysis of one system output
    Eval(EvalArgs),
    /// Bucket-by-bucket comparison of analysis reports
    Compare(CompareArgs),
    /// Serve the HTTP API over a system store
    Serve(ServeArgs),
    /// Train an embedding model
    Train(TrainArgs),
    /// Rank test triples with a model and write a system output
    Predict(PredictArgs),
    /// Repair symmetry violations of one relation by fine-tuning
    Debug(DebugArgs),
    /// Generate a synthetic dataset
    Synth(SynthArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Native,
    Pykeen,
    Libkge,
}

#[derive(Args, Debug, Clone)]
pub struct SysoutArgs {
    /// System output: native JSONL, or a rank dump with --format
    #[arg(long)]
    pub sysout: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Native)]
    pub format: Format,
    /// System name for dump formats [default: file stem]
    #[arg(long)]
    pub system_name: Option<String>,
    /// Dataset name for dump formats [default: dataset]
    #[arg(long)]
    pub dataset_name: Option<String>,
    /// Rank basis for dump formats
    #[arg(long, default_value = "filtered")]
    pub rank_basis: RankBasis,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ResourceArgs {
    /// Training triples (TSV), enables frequency and cardinality features
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Symmetric relation labels, one per line
    #[arg(long)]
    pub symmetric: Option<PathBuf>,
    /// Entity type map (TSV: entity, then types general to specific)
    #[arg(long)]
    pub type_map: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct CiArgs {
    /// Interval method: bootstrap, ttest or none
    #[arg(long, default_value = "bootstrap")]
    pub ci: String,
    #[arg(long)]
    pub ci_level: Option<f64>,
    #[arg(long)]
    pub ci_resamples: Option<usize>,
    #[arg(long, visible_alias = "seed")]
    pub ci_seed: Option<u64>,
    /// Buckets smaller than this get no interval
    #[arg(long)]
    pub ci_min_bucket: Option<usize>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: SysoutArgs,
    /// Write the validated native file here
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add the system to this store directory
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: SysoutArgs,
    #[command(flatten)]
    pub resources: ResourceArgs,
    /// Comma-separated features [default: all available]
    #[arg(long)]
    pub features: Option<String>,
    /// Comma-separated metrics [default: hits@1,hits@3,hits@10,mrr,mr]
    #[arg(long)]
    pub metric: Option<String>,
    #[command(flatten)]
    pub ci: CiArgs,
    /// Report output (JSON)
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Analysis reports of the systems to compare
    #[arg(long, num_args = 2.., required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value = "mrr")]
    pub metric: kgx_core::Metric,
    /// Comparison report output (JSON)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "kgx-store")]
    pub store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[command(flatten)]
    pub resources: ResourceArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Extra splits whose labels join the vocabulary
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value = "distmult")]
    pub kind: ModelKind,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 8)]
    pub negatives: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value = "adagrad")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value = "bce")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 2.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model output
    #[arg(long)]
    pub model: PathBuf,
    /// Per-epoch losses (JSON)
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Known triples removed from filtered rankings
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Raw ranks (no filtering)
    #[arg(long)]
    pub raw: bool,
    #[arg(long, default_value = "both")]
    pub directions: Directions,
    #[arg(long, default_value = "realistic")]
    pub tie: TieStrategy,
    /// Candidates stored per record
    #[arg(long, default_value_t = 0)]
    pub top_k: usize,
    /// [default: model file stem]
    #[arg(long)]
    pub system_name: Option<String>,
    #[arg(long, default_value = "dataset")]
    pub dataset_name: String,
    /// System output (native JSONL)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DebugArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Relation to debug [default: the most violated]
    #[arg(long)]
    pub relation: Option<String>,
    /// Fine-tuned model to keep
    #[arg(long, default_value = "in-danger")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub debug_set_size: usize,
    #[arg(long, default_value_t = 20)]
    pub in_danger_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub epoch_cap: usize,
    #[arg(long, default_value = "softmax")]
    pub loss: FinetuneLoss,
    /// Debug report output (JSON)
    #[arg(long)]
    pub report: PathBuf,
    /// Write the model of the chosen strategy here
    #[arg(long)]
    pub out_model: Option<PathBuf>,
    /// Directory for original-test system outputs of each variant
    #[arg(long)]
    pub outputs: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for train.tsv, valid.tsv, test.tsv and symmetric.txt
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub entities: usize,
    #[arg(long, default_value_t = 12)]
    pub relations: usize,
    #[arg(long, default_value_t = 3000)]
    pub triples: usize,
    #[arg(long, default_value_t = 0.25)]
    pub symmetric_fraction: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Eval(a) => commands::eval(a),
        Command::Compare(a) => commands::compare(a),
        Command::Serve(a) => commands::serve(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Debug(a) => commands::debug(a),
        Command::Synth(a) => commands::synth(a),
    }
}

pub use commands::{load_resources, load_sysout};
