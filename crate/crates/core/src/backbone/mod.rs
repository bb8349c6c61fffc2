//! The trajectory model: input embedding, four attention stages and a
//! multi-modal Laplace decoder.

mod model;

pub use model::{EncodedScene, Model, ModelLayout, ModelOutput, StageOutputs, POSITION_SCALE};

use serde::{Deserialize, Serialize};

use crate::layers::{BlockConfig, NormKind};
use crate::tensor::{Result, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks_per_stage: usize,
    pub modes: usize,
    pub obs_len: usize,
    pub pred_len: usize,
    /// Interaction radius for agent-agent and agent-lane attention, meters.
    pub radius: f64,
    pub norm_kind: NormKind,
    pub ffn_ratio: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 4,
            blocks_per_stage: 1,
            modes: 6,
            obs_len: crate::data::DEFAULT_OBS_LEN,
            pred_len: crate::data::DEFAULT_PRED_LEN,
            radius: 50.0,
            norm_kind: NormKind::DyT,
            ffn_ratio: 2,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            norm_kind: self.norm_kind,
            width: self.width,
            heads: self.heads,
            ffn_ratio: self.ffn_ratio,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TensorError::Invalid(m));
        if self.modes == 0 {
            return bad("modes must be at least 1".into());
        }
        if self.obs_len < 2 || self.pred_len == 0 {
            return bad(format!("horizons {}/{} too short", self.obs_len, self.pred_len));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("radius {} must be positive", self.radius));
        }
        if self.blocks_per_stage == 0 {
            return bad("blocks_per_stage must be at least 1".into());
        }
        self.block().validate()
    }
}

/// K candidate futures for one agent, world frame. Arrays are `[K, F, 2]`
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub modes: usize,
    pub pred_len: usize,
    pub locations: Vec<f64>,
    pub scales: Vec<f64>,
    pub mode_probs: Vec<f64>,
}

impl PredictionSet {
    pub fn location(&self, mode: usize, step: usize) -> [f64; 2] {
        let i = (mode * self.pred_len + step) * 2;
        [self.locations[i], self.locations[i + 1]]
    }

    pub fn scale(&self, mode: usize, step: usize) -> [f64; 2] {
        let i = (mode * self.pred_len + step) * 2;
        [self.scales[i], self.scales[i + 1]]
    }

    /// Mode `k` as a list of points.
    pub fn trajectory(&self, mode: usize) -> Vec<[f64; 2]> {
        (0..self.pred_len).map(|f| self.location(mode, f)).collect()
    }
}
