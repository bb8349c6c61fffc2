use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainError;

/// Cosine annealing with warm restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub eta_min: f64,
    pub eta_max: f64,
    /// Epochs per cycle.
    pub cycle_length: usize,
    pub num_cycles: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            eta_min: 1e-5,
            eta_max: 3e-3,
            cycle_length: 8,
            num_cycles: 4,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0 <= self.eta_min && self.eta_min < self.eta_max && self.eta_max.is_finite()) {
            return Err(TrainError::InvalidInput(format!(
                "need 0 <= eta_min < eta_max, got {} and {}",
                self.eta_min, self.eta_max
            )));
        }
        if self.cycle_length == 0 || self.num_cycles == 0 {
            return Err(TrainError::InvalidInput("cycle_length and num_cycles must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.cycle_length * self.num_cycles
    }
}

/// Learning rate `e_cur` epochs into a cycle, `0 <= e_cur <= cycle_length`.
pub fn lr_at(cfg: &SchedulerConfig, e_cur: f64) -> Result<f64, TrainError> {
    let e_i = cfg.cycle_length as f64;
    if !(0.0..=e_i).contains(&e_cur) {
        return Err(TrainError::InvalidInput(format!("E_cur {e_cur} outside [0, {e_i}]")));
    }
    Ok(cfg.eta_min + 0.5 * (cfg.eta_max - cfg.eta_min) * (1.0 + (PI * e_cur / e_i).cos()))
}
