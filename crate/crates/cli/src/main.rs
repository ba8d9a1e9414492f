//! `ordshap` command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

#[derive(Parser)]
#[command(
    name = "ordshap",
    version,
    about = "Position-sensitive Shapley attributions for sequence models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attribute one sample.
    Explain(ExplainArgs),
    /// Every exact quantity for a small sample.
    Exact(ExactArgs),
    /// Faithfulness curves and AUCs for a set of attributions.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic token dataset and its model configuration.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GameKind {
    /// Hat/Bag/Glove ordering game; features are deleted, not masked.
    Toy,
    /// Built-in synthetic token model, evaluated in process.
    Synthetic,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportArg {
    Pipe,
    Http,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearityArg {
    Linear,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    Sampling,
    Ls,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    PiCurve,
    Inc,
    Exc,
    Ins,
    Del,
}

/// Where payoffs come from.
#[derive(Args, Debug, Serialize)]
pub struct ModelArgs {
    /// Built-in game. Without it a remote model endpoint is required.
    #[arg(long, value_enum)]
    pub game: Option<GameKind>,
    /// Synthetic model configuration as written by `synth`.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = NonlinearityArg::Sigmoid)]
    pub nonlinearity: NonlinearityArg,
    #[arg(long, value_enum, default_value_t = TransportArg::Http)]
    pub transport: TransportArg,
    /// Base URL for http, command line for pipe.
    #[arg(long, env = "ORDSHAP_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub batch_limit: usize,
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    /// Number of output classes the remote model exposes.
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Concurrent model calls.
    #[arg(long, default_value_t = 4)]
    pub jobs: usize,
    #[arg(long, default_value_t = 2)]
    pub retries: usize,
    #[arg(long)]
    pub no_cache: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct SampleArgs {
    /// JSON {"tokens": [...], "groups": [...]?, "baseline": ...?}
    #[arg(long)]
    pub sample: Option<PathBuf>,
    /// Comma-separated position group of each feature; overrides the file.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub groups: Option<Vec<i64>>,
    /// Token written into ablated positions; overrides the file.
    #[arg(long)]
    pub baseline: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long, value_enum, default_value_t = Method::Ls)]
    pub method: Method,
    /// Coalitions (least squares) or orderings per feature (sampling).
    #[arg(long = "K", default_value_t = 256)]
    pub k: usize,
    /// Orderings per coalition (least squares) or subsets per ordering (sampling).
    #[arg(long = "L", default_value_t = 8)]
    pub l: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub class_index: usize,
    /// Feature (1-based) solved from the efficiency constraint.
    #[arg(long, default_value_t = 1)]
    pub eliminated_feature: usize,
    /// Tikhonov term added to the normal equations.
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    /// Include the feature × position matrix when the estimator has one.
    #[arg(long)]
    pub emit_gamma: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ExactArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long, default_value_t = 0)]
    pub class_index: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON array of samples.
    #[arg(long)]
    pub samples: PathBuf,
    /// One attribution file, or a JSON array of them in sample order.
    #[arg(long)]
    pub attributions: PathBuf,
    /// Repeat to select several; all by default.
    #[arg(long, value_enum)]
    pub metric: Vec<Metric>,
    /// Random reorderings averaged at each k.
    #[arg(long, default_value_t = 10)]
    pub permutations: usize,
    /// Keep masked samples in their original order.
    #[arg(long)]
    pub no_permute: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 10)]
    pub length: usize,
    #[arg(long, value_enum, default_value_t = NonlinearityArg::Sigmoid)]
    pub nonlinearity: NonlinearityArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Lib(#[from] ordshap::Error),
}

impl CliError {
    /// 2 for anything the caller can fix by changing arguments or inputs, 1 otherwise.
    fn exit_code(&self) -> u8 {
        use ordshap::Error as E;
        match self {
            CliError::Usage(_) | CliError::Read { .. } | CliError::Parse { .. } => 2,
            CliError::Lib(
                E::InvalidConfig(_)
                | E::SizeGuard { .. }
                | E::UnknownToken(_)
                | E::LengthMismatch { .. }
                | E::IndexOutOfRange { .. },
            ) => 2,
            CliError::Write { .. } | CliError::Lib(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Explain(a) => commands::explain(a),
        Command::Exact(a) => commands::exact(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Synth(a) => commands::synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
