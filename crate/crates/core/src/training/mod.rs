//! Losses, the warm-restart schedule, the optimizer, the training loop and
//! snapshot ensembles.

mod ensemble;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use ensemble::{average_params, average_predictions, Ensemble, EnsembleConfig, EnsembleStrategy};
pub use loss::{
    batch_loss, classification_ce, regression_nll, scenario_loss_terms, select_best_mode, total_loss, LossBreakdown, LossTerms, LossVars,
    PROB_FLOOR,
};
pub use optim::AdamW;
pub use schedule::{lr_at, SchedulerConfig};
pub use trainer::{
    log_jsonl, train, train_with, Divergence, EpochLog, ResumeState, Snapshot, TrainConfig, TrainHooks, TrainOutcome, TrainSetup,
};

use thiserror::Error;

use crate::evaluation::EvalError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error(transparent)]
    Model(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Hook(String),
}
