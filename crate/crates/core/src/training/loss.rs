use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::backbone::{ModelOutput, PredictionSet};
use crate::data::{Point, Scenario};
use crate::tensor::{Tape, Tensor, Var};

/// Lower bound applied to the target-mode probability before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reg: f64,
    pub cls: f64,
    pub lambda: f64,
}

fn last_valid(valid: &[bool]) -> Option<usize> {
    valid.iter().rposition(|&v| v)
}

/// Mode whose last valid step lands closest to the ground truth; the lowest
/// index wins ties.
pub fn select_best_mode(pred: &PredictionSet, gt: &[Point], valid: &[bool]) -> usize {
    let Some(f) = last_valid(valid) else { return 0 };
    let mut best = (0, f64::INFINITY);
    for k in 0..pred.modes {
        let p = pred.location(k, f);
        let d = (p[0] - gt[f][0]).powi(2) + (p[1] - gt[f][1]).powi(2);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Laplace negative log-likelihood of `mode`, summed over valid steps and
/// both coordinates: `log(2b) + |y - mu| / b`.
pub fn regression_nll(pred: &PredictionSet, mode: usize, gt: &[Point], valid: &[bool]) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for f in (0..pred.pred_len).filter(|&f| valid[f]) {
        let (mu, b) = (pred.location(mode, f), pred.scale(mode, f));
        for c in 0..2 {
            if !(b[c] > 0.0) {
                return Err(TrainError::InvalidInput(format!("non-positive scale {} at step {f}", b[c])));
            }
            sum += (2.0 * b[c]).ln() + (gt[f][c] - mu[c]).abs() / b[c];
        }
    }
    Ok(sum)
}

/// `-log(p[target])` with `p[target]` floored at [`PROB_FLOOR`].
pub fn classification_ce(mode_probs: &[f64], target: usize) -> f64 {
    -mode_probs[target].max(PROB_FLOOR).ln()
}

/// Winner-take-all loss of a batch of agents, averaged over agents.
pub fn total_loss<'a>(
    batch: impl IntoIterator<Item = (&'a PredictionSet, &'a [Point], &'a [bool])>,
    lambda: f64,
) -> Result<LossBreakdown, TrainError> {
    let (mut reg, mut cls, mut count) = (0.0, 0.0, 0usize);
    for (pred, gt, valid) in batch {
        let k = select_best_mode(pred, gt, valid);
        reg += regression_nll(pred, k, gt, valid)?;
        cls += classification_ce(&pred.mode_probs, k);
        count += 1;
    }
    if count == 0 {
        return Err(TrainError::InvalidInput("loss over an empty batch".into()));
    }
    let (reg, cls) = (reg / count as f64, cls / count as f64);
    Ok(LossBreakdown {
        total: reg + lambda * cls,
        reg,
        cls,
        lambda,
    })
}

/// Summed loss terms of one scenario's trainable agents, on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub reg: Var,
    pub cls: Var,
    pub agents: usize,
}

/// Regression and classification sums over the trainable agents of `s`.
/// Mode selection reads values only, so no gradient flows through it.
pub fn scenario_loss_terms(tape: &mut Tape, out: &ModelOutput, s: &Scenario) -> Result<Option<LossTerms>, TrainError> {
    let shape = tape.shape(out.locations).to_vec();
    let (n, k, f) = (shape[0], shape[1], shape[2]);
    let agents: Vec<usize> = (0..n).filter(|&a| s.is_trainable(a)).collect();
    if agents.is_empty() {
        return Ok(None);
    }
    let locations = tape.value(out.locations);
    let mut rows = Vec::with_capacity(agents.len());
    let mut gt = Vec::with_capacity(agents.len() * f * 2);
    let mut mask = Vec::with_capacity(agents.len() * f * 2);
    for &a in &agents {
        let (truth, valid) = (s.future(a), s.future_mask(a));
        let last = last_valid(valid).unwrap_or(f - 1);
        let mut best = (0, f64::INFINITY);
        for m in 0..k {
            let i = ((a * k + m) * f + last) * 2;
            let d = (locations[i] - truth[last][0]).powi(2) + (locations[i + 1] - truth[last][1]).powi(2);
            if d < best.1 {
                best = (m, d);
            }
        }
        rows.push(a * k + best.0);
        for step in 0..f {
            let w = if valid[step] { 1.0 } else { 0.0 };
            gt.extend_from_slice(&truth[step]);
            mask.extend_from_slice(&[w, w]);
        }
    }
    let count = agents.len();
    let locs = tape.reshape(out.locations, [n * k, f * 2])?;
    let locs = tape.index_select(locs, 0, &rows)?;
    let scales = tape.reshape(out.scales, [n * k, f * 2])?;
    let scales = tape.index_select(scales, 0, &rows)?;
    let gt = tape.constant(Tensor::new([count, f * 2], gt)?);
    let mask = tape.constant(Tensor::new([count, f * 2], mask)?);
    let resid = tape.sub(gt, locs)?;
    let resid = tape.abs(resid);
    let resid = tape.div(resid, scales)?;
    let two_b = tape.scale(scales, 2.0);
    let log_term = tape.log(two_b)?;
    let nll = tape.add(log_term, resid)?;
    let nll = tape.mul(nll, mask)?;
    let reg = tape.sum_all(nll);

    let probs = tape.reshape(out.mode_probs, [n * k])?;
    let probs = tape.index_select(probs, 0, &rows)?;
    let probs = tape.clamp_min(probs, PROB_FLOOR);
    let logp = tape.log(probs)?;
    let cls = tape.sum_all(logp);
    let cls = tape.neg(cls);
    Ok(Some(LossTerms { reg, cls, agents: count }))
}

/// Batch loss on one tape: `reg` and `cls` are averaged over all trainable
/// agents and `total = reg + lambda * cls`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub reg: Var,
    pub cls: Var,
    pub agents: usize,
}

pub fn batch_loss(tape: &mut Tape, outputs: &[(&ModelOutput, &Scenario)], lambda: f64) -> Result<LossVars, TrainError> {
    let mut terms = Vec::new();
    for (out, s) in outputs {
        terms.extend(scenario_loss_terms(tape, out, s)?);
    }
    let agents: usize = terms.iter().map(|t| t.agents).sum();
    if agents == 0 {
        return Err(TrainError::InvalidInput("batch has no trainable agent".into()));
    }
    let mut reg = terms[0].reg;
    let mut cls = terms[0].cls;
    for t in &terms[1..] {
        reg = tape.add(reg, t.reg)?;
        cls = tape.add(cls, t.cls)?;
    }
    let reg = tape.scale(reg, 1.0 / agents as f64);
    let cls = tape.scale(cls, 1.0 / agents as f64);
    let weighted = tape.scale(cls, lambda);
    let total = tape.add(reg, weighted)?;
    Ok(LossVars { total, reg, cls, agents })
}
