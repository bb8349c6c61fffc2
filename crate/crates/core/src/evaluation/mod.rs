//! Forecasting metrics, latency benchmarking and the ablation grid.

mod ablation;
mod latency;
mod metrics;
mod predictor;

pub use ablation::{run_ablation, run_ablation_with, AblationCell, AblationConfig, AblationReport, GRID};
pub use latency::{bench_latency, bench_normalizer, LatencyReport, MIN_ITERATIONS, MIN_WARMUP};

pub use metrics::{eval_threads, evaluate, focal_errors, is_miss, min_ade, min_fde, miss_rate, FocalErrors, MetricsReport, MISS_THRESHOLD};
pub use predictor::{ConstantVelocity, Oracle, Predictor};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] TensorError),
}
