use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::layers::{ParamId, ParamStore};

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn reset(&mut self) {
        self.step = 0;
        for m in self.first_moment.iter_mut().chain(&mut self.second_moment) {
            m.fill(0.0);
        }
    }

    /// One update. Any non-finite gradient aborts before a parameter moves.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<(), TrainError> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(TrainError::InvalidInput(format!(
                "{} gradients and {} moment buffers for {} parameters",
                grads.len(),
                self.first_moment.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if g.len() != p.data.len() {
                return Err(TrainError::InvalidInput(format!("gradient of {} has the wrong length", p.name)));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGradient { param: p.name.clone() });
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            let w = params.data_mut(ParamId(i));
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                w[j] -= lr * (update + self.weight_decay * w[j]);
            }
        }
        Ok(())
    }
}
