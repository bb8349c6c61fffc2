use serde::{Deserialize, Serialize};

use super::{EvalError, Predictor};
use crate::backbone::PredictionSet;
use crate::data::{Point, Scenario};

/// Endpoint error above which a prediction counts as a miss, meters.
pub const MISS_THRESHOLD: f64 = 2.0;

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])).sqrt()
}

/// Smallest mean displacement over valid steps across modes; `None` when no
/// step is valid.
pub fn min_ade(pred: &PredictionSet, gt: &[Point], valid: &[bool]) -> Option<f64> {
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return None;
    }
    (0..pred.modes)
        .map(|k| {
            let mut sum = 0.0;
            for f in 0..pred.pred_len {
                if valid[f] {
                    sum += dist(pred.location(k, f), gt[f]);
                }
            }
            sum / count as f64
        })
        .reduce(f64::min)
}

/// Smallest final-step displacement across modes; `None` when the final step
/// is not valid.
pub fn min_fde(pred: &PredictionSet, gt: &[Point], valid: &[bool]) -> Option<f64> {
    let last = pred.pred_len.checked_sub(1)?;
    if !valid[last] {
        return None;
    }
    (0..pred.modes).map(|k| dist(pred.location(k, last), gt[last])).reduce(f64::min)
}

pub fn is_miss(min_fde: f64) -> bool {
    min_fde > MISS_THRESHOLD
}

/// Fraction of agents whose best endpoint misses by more than 2 m. Agents
/// without a valid final step are skipped.
pub fn miss_rate<'a>(items: impl IntoIterator<Item = (&'a PredictionSet, &'a [Point], &'a [bool])>) -> Result<f64, EvalError> {
    let (mut misses, mut total) = (0usize, 0usize);
    for (pred, gt, valid) in items {
        if let Some(fde) = min_fde(pred, gt, valid) {
            total += 1;
            misses += is_miss(fde) as usize;
        }
    }
    if total == 0 {
        return Err(EvalError::Empty("miss rate over no evaluable agents".into()));
    }
    Ok(misses as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "minADE")]
    pub min_ade: f64,
    #[serde(rename = "minFDE")]
    pub min_fde: f64,
    #[serde(rename = "MR")]
    pub miss_rate: f64,
    pub count: usize,
}

/// Per-scenario focal-agent errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalErrors {
    pub ade: Option<f64>,
    pub fde: Option<f64>,
}

impl FocalErrors {
    pub fn of(pred: &PredictionSet, s: &Scenario) -> Self {
        let (gt, valid) = (s.future(s.focal), s.future_mask(s.focal));
        Self {
            ade: min_ade(pred, gt, valid),
            fde: min_fde(pred, gt, valid),
        }
    }
}

impl MetricsReport {
    /// Aggregate in the given order. ADE averages over scenarios with any
    /// valid future step, FDE and MR over those with a valid final step.
    pub fn from_errors(errors: &[FocalErrors]) -> Result<Self, EvalError> {
        let ades: Vec<f64> = errors.iter().filter_map(|e| e.ade).collect();
        let fdes: Vec<f64> = errors.iter().filter_map(|e| e.fde).collect();
        if ades.is_empty() || fdes.is_empty() {
            return Err(EvalError::Empty("no scenario has an evaluable focal future".into()));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(Self {
            min_ade: mean(&ades),
            min_fde: mean(&fdes),
            miss_rate: fdes.iter().filter(|&&f| is_miss(f)).count() as f64 / fdes.len() as f64,
            count: ades.len(),
        })
    }
}

/// Worker count for evaluation fan-out: `DYTTP_THREADS` if set, otherwise
/// the available parallelism.
pub fn eval_threads() -> usize {
    std::env::var("DYTTP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Focal errors for every scenario, in input order regardless of threads.
pub fn focal_errors<P: Predictor + ?Sized>(predictor: &P, scenarios: &[Scenario], threads: usize) -> Result<Vec<FocalErrors>, EvalError> {
    let one = |s: &Scenario| -> Result<FocalErrors, EvalError> {
        let pred = predictor.predict_focal(s)?;
        Ok(FocalErrors::of(&pred, s))
    };
    let threads = threads.clamp(1, scenarios.len().max(1));
    if threads == 1 {
        return scenarios.iter().map(one).collect();
    }
    let chunk = scenarios.len().div_ceil(threads);
    let parts: Vec<Result<Vec<FocalErrors>, EvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(one).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(scenarios.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Focal-agent minADE / minFDE / MR over `scenarios`.
pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, scenarios: &[Scenario]) -> Result<MetricsReport, EvalError> {
    MetricsReport::from_errors(&focal_errors(predictor, scenarios, eval_threads())?)
}
