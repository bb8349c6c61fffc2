use crate::backbone::{Model, PredictionSet};
use crate::data::Scenario;
use crate::tensor::{Result, TensorError};

/// Anything that maps a scenario to one prediction set per agent.
pub trait Predictor: Sync {
    fn name(&self) -> String;

    fn predict(&self, s: &Scenario) -> Result<Vec<PredictionSet>>;

    fn predict_focal(&self, s: &Scenario) -> Result<PredictionSet> {
        self.predict(s)?
            .into_iter()
            .nth(s.focal)
            .ok_or_else(|| TensorError::Invalid(format!("no prediction for focal agent of {}", s.id)))
    }
}

impl Predictor for Model {
    fn name(&self) -> String {
        format!("model-{}", self.cfg.norm_kind.label())
    }

    fn predict(&self, s: &Scenario) -> Result<Vec<PredictionSet>> {
        Model::predict(self, s)
    }
}

fn uniform_set(modes: usize, pred_len: usize, path: &[[f64; 2]]) -> PredictionSet {
    let one: Vec<f64> = path.iter().flatten().copied().collect();
    PredictionSet {
        modes,
        pred_len,
        locations: one.repeat(modes),
        scales: vec![1.0; modes * pred_len * 2],
        mode_probs: vec![1.0 / modes as f64; modes],
    }
}

/// Extrapolates the last observed displacement; every mode is the same.
#[derive(Debug, Clone, Copy)]
pub struct ConstantVelocity {
    pub modes: usize,
}

impl ConstantVelocity {
    pub fn extrapolate(s: &Scenario, agent: usize) -> Vec<[f64; 2]> {
        let h = s.history(agent);
        let valid: Vec<usize> = (0..s.obs_len).filter(|&t| s.history_mask(agent)[t]).collect();
        let (last, v) = match valid.as_slice() {
            [] => ([0.0, 0.0], [0.0, 0.0]),
            [t] => (h[*t], [0.0, 0.0]),
            [.., p, t] => {
                let gap = (t - p) as f64;
                (h[*t], [(h[*t][0] - h[*p][0]) / gap, (h[*t][1] - h[*p][1]) / gap])
            }
        };
        (1..=s.pred_len)
            .map(|k| [last[0] + k as f64 * v[0], last[1] + k as f64 * v[1]])
            .collect()
    }
}

impl Predictor for ConstantVelocity {
    fn name(&self) -> String {
        "constant-velocity".into()
    }

    fn predict(&self, s: &Scenario) -> Result<Vec<PredictionSet>> {
        Ok((0..s.num_agents())
            .map(|a| uniform_set(self.modes, s.pred_len, &Self::extrapolate(s, a)))
            .collect())
    }
}

/// Reads the ground truth. Invalid future steps repeat the previous point.
#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub modes: usize,
}

impl Predictor for Oracle {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, s: &Scenario) -> Result<Vec<PredictionSet>> {
        Ok((0..s.num_agents())
            .map(|a| {
                let mut last = s.last_observed(a).unwrap_or([0.0, 0.0]);
                let path: Vec<[f64; 2]> = s
                    .future(a)
                    .iter()
                    .zip(s.future_mask(a))
                    .map(|(&p, &v)| {
                        if v {
                            last = p;
                        }
                        last
                    })
                    .collect();
                uniform_set(self.modes, s.pred_len, &path)
            })
            .collect())
    }
}
