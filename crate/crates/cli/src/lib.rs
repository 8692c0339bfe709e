//! Driver for the `urt` command: synthetic data generation, estimation,
//! evaluation and sensitivity grids.

pub mod commands;
pub mod manifest;
pub mod pipeline;

use std::io;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] urt_estimate::Error),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 usage, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numerical() => 4,
            _ => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "urt",
    version,
    about = "Urban rail link and waiting time estimation from fare-collection records"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic network, ground truth and AFC records.
    Synth(SynthArgs),
    /// Estimate link and waiting times from AFC records.
    Estimate(EstimateArgs),
    /// Score an estimation result against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the noise × OD-deletion grid on synthetic data.
    Sensitivity(SensitivityArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Demand {
    Peaked,
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Refresh {
    Batch,
    Epoch,
}

#[derive(Clone, Debug, Args)]
pub struct IntervalArgs {
    /// Start of the first interval, minutes after midnight.
    #[arg(long, default_value_t = 420.0)]
    pub start: f64,
    /// Interval width in minutes.
    #[arg(long, default_value_t = 30.0)]
    pub width: f64,
    /// Number of intervals.
    #[arg(long, default_value_t = 10)]
    pub intervals: usize,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    /// `fig3`, `fig8`, a link-table CSV or a network snapshot JSON.
    #[arg(long, default_value = "fig3")]
    pub network: String,
    /// Records per (OD, interval) cell before demand multipliers.
    #[arg(long, default_value_t = 200)]
    pub base_records: usize,
    #[arg(long, value_enum, default_value = "peaked")]
    pub demand: Demand,
    /// White-noise level; travel times are scaled by 1 + N(0, noise/2).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Fraction of OD pairs whose records are all removed.
    #[arg(long = "delete-od", default_value_t = 0.0)]
    pub delete_od: f64,
    /// Logit scale of the simulated route choice.
    #[arg(long, default_value_t = 0.3)]
    pub theta: f64,
    /// Paths per OD pair.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[command(flatten)]
    pub window: IntervalArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct EstimateArgs {
    /// `fig3`, `fig8`, a link-table CSV or a network snapshot JSON.
    #[arg(long)]
    pub network: String,
    /// AFC records CSV.
    #[arg(long)]
    pub afc: PathBuf,
    /// Ground truth JSON written by `synth`; enables R² reporting.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Estimator settings as JSON; command-line flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub window: IntervalArgs,
    /// Paths per OD pair.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Fill missing cells with SoftImpute before fitting.
    #[arg(long)]
    pub impute: bool,
    /// Row weight of imputed cells.
    #[arg(long, requires = "impute")]
    pub imputed_weight: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Fit the logit scale as well.
    #[arg(long)]
    pub learn_theta: bool,
    /// Start from uniform random times instead of the priors.
    #[arg(long)]
    pub random_init: bool,
    /// How often route probabilities are recomputed.
    #[arg(long, value_enum)]
    pub p_refresh: Option<Refresh>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct EvaluateArgs {
    /// `result.json` written by `estimate`.
    #[arg(long)]
    pub result: PathBuf,
    /// `truth.json` written by `synth`.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long, default_value = "fig8")]
    pub network: String,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2")]
    pub noise: Vec<f64>,
    #[arg(long = "delete-od", value_delimiter = ',', default_value = "0,0.2,0.5")]
    pub delete_od: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 200)]
    pub base_records: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[command(flatten)]
    pub window: IntervalArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line. `argv` is recorded in the manifest.
pub fn run(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a, argv),
        Command::Estimate(a) => commands::estimate(&a, argv),
        Command::Evaluate(a) => commands::evaluate(&a, argv),
        Command::Sensitivity(a) => commands::sensitivity(&a, argv),
    }
}
