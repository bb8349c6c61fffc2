use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::backbone::{Model, PredictionSet};
use crate::data::Scenario;
use crate::evaluation::Predictor;
use crate::layers::{ParamId, ParamStore};
use crate::tensor::{Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleStrategy {
    PredictionAverage,
    ParameterAverage,
}

impl std::str::FromStr for EnsembleStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "prediction_average" => Ok(Self::PredictionAverage),
            "parameter_average" => Ok(Self::ParameterAverage),
            other => Err(format!("unknown ensemble strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub strategy: EnsembleStrategy,
    /// Most recent snapshots to combine; `None` uses all of them.
    pub snapshots_used: Option<usize>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            strategy: EnsembleStrategy::PredictionAverage,
            snapshots_used: None,
        }
    }
}

/// Mean written as `x0 + sum(xi - x0) / S`, so identical inputs return the
/// shared value bit for bit.
fn average_into(out: &mut [f64], members: &[&[f64]]) {
    let s = members.len() as f64;
    for (j, o) in out.iter_mut().enumerate() {
        let x0 = members[0][j];
        let spread: f64 = members[1..].iter().map(|m| m[j] - x0).sum();
        *o = x0 + spread / s;
    }
}

/// Elementwise mean of parameter sets with one layout.
pub fn average_params(sets: &[&ParamStore]) -> std::result::Result<ParamStore, TrainError> {
    let first = *sets
        .first()
        .ok_or_else(|| TrainError::InvalidInput("no parameter sets to average".into()))?;
    if let Some(bad) = sets.iter().find(|p| !p.same_layout(first)) {
        return Err(TrainError::ArchitectureMismatch(format!(
            "parameter set with {} tensors does not match {}",
            bad.len(),
            first.len()
        )));
    }
    let mut out = first.clone();
    for i in 0..first.len() {
        let id = ParamId(i);
        let members: Vec<&[f64]> = sets.iter().map(|p| p.get(id).data.as_slice()).collect();
        average_into(out.data_mut(id), &members);
    }
    Ok(out)
}

/// Per-agent average of several members' prediction sets. Mode
/// probabilities are renormalized unless every member agrees exactly.
pub fn average_predictions(members: &[Vec<PredictionSet>]) -> Result<Vec<PredictionSet>> {
    let first = members
        .first()
        .ok_or_else(|| TensorError::Invalid("no predictions to average".into()))?;
    let mut out = first.clone();
    for (a, set) in out.iter_mut().enumerate() {
        let pick = |f: fn(&PredictionSet) -> &[f64]| -> Vec<&[f64]> { members.iter().map(|m| f(&m[a])).collect() };
        average_into(&mut set.locations, &pick(|p| &p.locations));
        average_into(&mut set.scales, &pick(|p| &p.scales));
        let probs = pick(|p| &p.mode_probs);
        average_into(&mut set.mode_probs, &probs);
        if probs.iter().any(|p| *p != probs[0]) {
            let total: f64 = set.mode_probs.iter().sum();
            set.mode_probs.iter_mut().for_each(|p| *p /= total);
        }
    }
    Ok(out)
}

/// Snapshot ensemble over one architecture.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub strategy: EnsembleStrategy,
    pub members: Vec<Model>,
    /// Snapshots combined, which parameter averaging folds into one member.
    pub snapshots: usize,
}

impl Ensemble {
    /// Combine the last `cfg.snapshots_used` of `snapshots` on the
    /// architecture of `base`. Parameter averaging folds them into one model
    /// up front.
    pub fn new(base: &Model, snapshots: &[&ParamStore], cfg: &EnsembleConfig) -> std::result::Result<Self, TrainError> {
        if snapshots.is_empty() {
            return Err(TrainError::InvalidInput("ensemble needs at least one snapshot".into()));
        }
        let used = cfg.snapshots_used.unwrap_or(snapshots.len());
        if used == 0 {
            return Err(TrainError::InvalidInput("snapshots_used must be at least 1".into()));
        }
        let chosen = &snapshots[snapshots.len().saturating_sub(used)..];
        for p in chosen {
            if !base.params.same_layout(p) {
                return Err(TrainError::ArchitectureMismatch(
                    "snapshot does not match the model architecture".into(),
                ));
            }
        }
        let members = match cfg.strategy {
            EnsembleStrategy::PredictionAverage => chosen.iter().map(|p| base.with_params((*p).clone())).collect::<Result<Vec<_>>>()?,
            EnsembleStrategy::ParameterAverage => vec![base.with_params(average_params(chosen)?)?],
        };
        Ok(Self {
            strategy: cfg.strategy,
            members,
            snapshots: chosen.len(),
        })
    }
}

impl Predictor for Ensemble {
    fn name(&self) -> String {
        let kind = match self.strategy {
            EnsembleStrategy::PredictionAverage => "prediction_average",
            EnsembleStrategy::ParameterAverage => "parameter_average",
        };
        format!("ensemble-{kind}-{}", self.snapshots)
    }

    fn predict(&self, s: &Scenario) -> Result<Vec<PredictionSet>> {
        if let [only] = self.members.as_slice() {
            return only.predict(s);
        }
        let outputs = self.members.iter().map(|m| m.predict(s)).collect::<Result<Vec<_>>>()?;
        average_predictions(&outputs)
    }
}
