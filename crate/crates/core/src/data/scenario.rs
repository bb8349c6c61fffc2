use serde::{Deserialize, Serialize};

use super::DataError;

/// Sampling interval of every trajectory, seconds.
pub const STEP_SECONDS: f64 = 0.1;
pub const DEFAULT_OBS_LEN: usize = 20;
pub const DEFAULT_PRED_LEN: usize = 30;

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: String,
    pub points: Vec<Point>,
}

/// Maneuver of the focal agent, when known (synthetic data only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Unknown,
    Straight,
    LeftTurn,
    RightTurn,
    LaneChange,
}

impl ScenarioKind {
    pub fn code(self) -> u8 {
        match self {
            ScenarioKind::Unknown => 0,
            ScenarioKind::Straight => 1,
            ScenarioKind::LeftTurn => 2,
            ScenarioKind::RightTurn => 3,
            ScenarioKind::LaneChange => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ScenarioKind::Unknown,
            1 => ScenarioKind::Straight,
            2 => ScenarioKind::LeftTurn,
            3 => ScenarioKind::RightTurn,
            4 => ScenarioKind::LaneChange,
            _ => return None,
        })
    }

    pub fn is_turn(self) -> bool {
        matches!(self, ScenarioKind::LeftTurn | ScenarioKind::RightTurn)
    }
}

/// One prediction instance: N agents observed for `obs_len` steps, their
/// next `pred_len` steps, and the lane centerlines around them. All
/// per-agent arrays are agent-major (`agent * len + step`).
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub obs_len: usize,
    pub pred_len: usize,
    pub histories: Vec<Point>,
    pub history_valid: Vec<bool>,
    pub futures: Vec<Point>,
    pub future_valid: Vec<bool>,
    pub lanes: Vec<Lane>,
    pub focal: usize,
    pub kind: ScenarioKind,
}

impl Scenario {
    pub fn num_agents(&self) -> usize {
        self.histories.len().checked_div(self.obs_len).unwrap_or(0)
    }

    pub fn history(&self, agent: usize) -> &[Point] {
        &self.histories[agent * self.obs_len..(agent + 1) * self.obs_len]
    }

    pub fn history_mask(&self, agent: usize) -> &[bool] {
        &self.history_valid[agent * self.obs_len..(agent + 1) * self.obs_len]
    }

    pub fn future(&self, agent: usize) -> &[Point] {
        &self.futures[agent * self.pred_len..(agent + 1) * self.pred_len]
    }

    pub fn future_mask(&self, agent: usize) -> &[bool] {
        &self.future_valid[agent * self.pred_len..(agent + 1) * self.pred_len]
    }

    /// Last valid observed position; `None` if the agent was never observed.
    pub fn last_observed(&self, agent: usize) -> Option<Point> {
        let h = self.history(agent);
        self.history_mask(agent).iter().rposition(|&v| v).map(|t| h[t])
    }

    pub fn valid_history_steps(&self, agent: usize) -> usize {
        self.history_mask(agent).iter().filter(|&&v| v).count()
    }

    /// Agents with at least two observed steps and one known future step
    /// contribute to the loss.
    pub fn is_trainable(&self, agent: usize) -> bool {
        self.valid_history_steps(agent) >= 2 && self.future_mask(agent).iter().any(|&v| v)
    }

    /// Copy with every coordinate shifted by `offset`.
    pub fn translated(&self, offset: Point) -> Scenario {
        let shift = |p: &Point| [p[0] + offset[0], p[1] + offset[1]];
        Scenario {
            histories: self.histories.iter().map(shift).collect(),
            futures: self.futures.iter().map(shift).collect(),
            lanes: self
                .lanes
                .iter()
                .map(|l| Lane {
                    id: l.id.clone(),
                    points: l.points.iter().map(shift).collect(),
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Copy with agents reordered so new agent `i` is old agent `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Scenario {
        let mut out = self.clone();
        out.histories.clear();
        out.history_valid.clear();
        out.futures.clear();
        out.future_valid.clear();
        for &a in order {
            out.histories.extend_from_slice(self.history(a));
            out.history_valid.extend_from_slice(self.history_mask(a));
            out.futures.extend_from_slice(self.future(a));
            out.future_valid.extend_from_slice(self.future_mask(a));
        }
        out.focal = order.iter().position(|&a| a == self.focal).unwrap_or(0);
        out
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.num_agents();
        let bad = |msg: String| Err(DataError::InvalidScenario { id: self.id.clone(), msg });
        if self.obs_len < 2 || self.pred_len < 1 {
            return bad(format!("horizons {}/{} too short", self.obs_len, self.pred_len));
        }
        if n == 0 || self.histories.len() != n * self.obs_len {
            return bad("history array is not agent-major N x T".into());
        }
        if self.history_valid.len() != n * self.obs_len
            || self.futures.len() != n * self.pred_len
            || self.future_valid.len() != n * self.pred_len
        {
            return bad("array lengths disagree with agent count".into());
        }
        if self.focal >= n {
            return bad(format!("focal index {} out of range for {n} agents", self.focal));
        }
        if !self.history_mask(self.focal).iter().all(|&v| v) {
            return bad("focal agent must be observed at every step".into());
        }
        let finite = |p: &Point| p[0].is_finite() && p[1].is_finite();
        let lanes_ok = self.lanes.iter().all(|l| l.points.iter().all(finite));
        if !(self.histories.iter().all(finite) && self.futures.iter().all(finite) && lanes_ok) {
            return bad("non-finite coordinate".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<Scenario>,
    pub val: Vec<Scenario>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.val.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Scenario> {
        self.train.iter().chain(&self.val)
    }
}
