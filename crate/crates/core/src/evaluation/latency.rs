use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{EvalError, Predictor};
use crate::data::Scenario;
use crate::layers::NormKind;
use crate::tensor::{Rng, Tape, Tensor};

pub const MIN_ITERATIONS: usize = 100;
pub const MIN_WARMUP: usize = 10;

/// Wall-clock statistics of repeated forward passes, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub ave_ms: f64,
    /// Population standard deviation.
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub iterations: usize,
    pub warmup_iterations: usize,
}

impl LatencyReport {
    pub fn from_samples(samples_ms: &[f64], warmup_iterations: usize) -> Result<Self, EvalError> {
        if samples_ms.is_empty() {
            return Err(EvalError::Empty("latency report over no samples".into()));
        }
        let n = samples_ms.len() as f64;
        let ave = samples_ms.iter().sum::<f64>() / n;
        let var = samples_ms.iter().map(|s| (s - ave) * (s - ave)).sum::<f64>() / n;
        let min = samples_ms.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples_ms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            // Summation rounding can push the mean a hair outside [min, max].
            ave_ms: ave.clamp(min, max),
            std_ms: var.sqrt(),
            min_ms: min,
            max_ms: max,
            iterations: samples_ms.len(),
            warmup_iterations,
        })
    }
}

fn check_counts(iterations: usize, warmup: usize) -> Result<(), EvalError> {
    if iterations < MIN_ITERATIONS || warmup < MIN_WARMUP {
        return Err(EvalError::InvalidArgument(format!(
            "latency needs at least {MIN_ITERATIONS} timed and {MIN_WARMUP} warm-up iterations, got {iterations} and {warmup}"
        )));
    }
    Ok(())
}

/// Time one full prediction per iteration on the calling thread, cycling
/// through `scenarios` in order. Warm-up passes continue the same cycle.
pub fn bench_latency<P: Predictor + ?Sized>(
    predictor: &P,
    scenarios: &[Scenario],
    iterations: usize,
    warmup: usize,
) -> Result<LatencyReport, EvalError> {
    check_counts(iterations, warmup)?;
    if scenarios.is_empty() {
        return Err(EvalError::Empty("latency benchmark needs at least one scenario".into()));
    }
    let mut samples = Vec::with_capacity(iterations);
    for i in 0..warmup + iterations {
        let s = &scenarios[i % scenarios.len()];
        let start = Instant::now();
        let out = predictor.predict(s)?;
        let elapsed = start.elapsed();
        std::hint::black_box(&out);
        if i >= warmup {
            samples.push(elapsed.as_secs_f64() * 1e3);
        }
    }
    LatencyReport::from_samples(&samples, warmup)
}

/// Time a single normalization layer forward on a standard-normal input of
/// `shape`, with unit gain, zero bias and the default DyT alpha.
pub fn bench_normalizer(kind: NormKind, shape: &[usize], iterations: usize, warmup: usize) -> Result<LatencyReport, EvalError> {
    check_counts(iterations, warmup)?;
    let channels = *shape
        .last()
        .ok_or_else(|| EvalError::InvalidArgument("normalizer input needs at least one axis".into()))?;
    let n: usize = shape.iter().product();
    let mut rng = Rng::seed(0x6e6f726d);
    let x = Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect())?;
    let mut tape = Tape::inference();
    let x = tape.constant(x);
    let gamma = tape.constant(Tensor::full([channels], 1.0));
    let beta = tape.constant(Tensor::zeros([channels]));
    let alpha = tape.constant(Tensor::from_vec(vec![crate::layers::DYT_ALPHA_INIT]));
    let mark = tape.len();
    let mut samples = Vec::with_capacity(iterations);
    for i in 0..warmup + iterations {
        let start = Instant::now();
        let y = match kind {
            NormKind::DyT => tape.dyt(x, alpha, gamma, beta)?,
            NormKind::LayerNorm => tape.layer_norm(x, gamma, beta, crate::layers::LAYER_NORM_EPS)?,
        };
        std::hint::black_box(tape.value(y));
        let elapsed = start.elapsed();
        tape.truncate(mark);
        if i >= warmup {
            samples.push(elapsed.as_secs_f64() * 1e3);
        }
    }
    LatencyReport::from_samples(&samples, warmup)
}
