//! The `dyttp` command line.
//!
//! Settings resolve in three layers: built-in defaults, then the JSON run
//! config given by `--config`, then individual flags. Exit codes: 0 success,
//! 2 usage or input error, 3 training divergence, 4 checkpoint mismatch,
//! 1 internal error.

mod checkpoint;
mod commands;
mod config;

pub use checkpoint::{
    config_digest, decode_checkpoint, decode_resume, encode_checkpoint, encode_resume, load_checkpoint, load_resume, save_checkpoint,
    save_resume, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, RESUME_MAGIC,
};
pub use config::{load_dataset, source_for_path, DataSource, RunConfig};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::data::DataError;
use crate::evaluation::EvalError;
use crate::layers::NormKind;
use crate::training::TrainError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::Checkpoint(_) => EXIT_CHECKPOINT,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Checkpoint(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::ArchitectureMismatch(_) => CliError::Checkpoint(e.to_string()),
            TrainError::InvalidInput(_) => CliError::Usage(e.to_string()),
            TrainError::Eval(e) => e.into(),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(_) => CliError::Internal(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dyttp", version, about = "Normalization-free transformer trajectory forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario container.
    GenData(GenDataArgs),
    /// Train with warm restarts, writing one checkpoint per cycle.
    Train(TrainArgs),
    /// Score checkpoints or an ensemble with minADE / minFDE / MR.
    Evaluate(EvaluateArgs),
    /// Measure per-scenario inference latency.
    Bench(BenchArgs),
    /// Train and score the DyT × Snapshot grid.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Positional noise standard deviation in meters.
    #[arg(long)]
    pub noise_std: Option<f64>,
}

/// Flags that override fields of the run config.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON run config; flags below take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario container file or CSV directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub blocks_per_stage: Option<usize>,
    /// Normalization layer: dyt or layernorm.
    #[arg(long)]
    pub norm: Option<NormKind>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub cycle_length: Option<usize>,
    #[arg(long)]
    pub eta_max: Option<f64>,
    #[arg(long)]
    pub eta_min: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Continue from the resume state left in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum EnsembleMode {
    Off,
    PredictionAverage,
    ParameterAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PredictorKind {
    Model,
    Oracle,
    ConstantVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    All,
}

/// Which parameters to run.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Training output directory; its archived config is the base config.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Checkpoint files, oldest first. Defaults to every snapshot in `--run`.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// off uses the last checkpoint alone. Defaults to the config's strategy.
    #[arg(long, value_enum)]
    pub ensemble: Option<EnsembleMode>,
    #[arg(long)]
    pub snapshots_used: Option<usize>,
    #[arg(long, value_enum, default_value_t = SplitChoice::Val)]
    pub split: SplitChoice,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = PredictorKind::Model)]
    pub predictor: PredictorKind,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Without `--run` or `--checkpoint`, freshly initialized parameters of the
/// configured model are timed.
#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Time a single normalization layer on `--shape` instead of the model.
    #[arg(long)]
    pub layer: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 50, 64])]
    pub shape: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long, default_value_t = 20)]
    pub warmup: usize,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long, default_value_t = 20)]
    pub warmup: usize,
}

/// Parse `args` (including the program name), run, and return the exit code.
/// Reports go to stdout, progress and errors to stderr.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a, &mut stdout),
        Command::Train(a) => commands::train(&a, &mut stdout),
        Command::Evaluate(a) => commands::evaluate(&a, &mut stdout),
        Command::Bench(a) => commands::bench(&a, &mut stdout),
        Command::Ablate(a) => commands::ablate(&a, &mut stdout),
    }
}
