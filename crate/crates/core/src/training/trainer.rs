use serde::{Deserialize, Serialize};

use super::{lr_at, scenario_loss_terms, AdamW, SchedulerConfig, TrainError};
use crate::backbone::{Model, ModelConfig};
use crate::data::{DatasetSplit, Scenario};
use crate::evaluation::{eval_threads, focal_errors, MetricsReport};
use crate::layers::{Ctx, ParamStore};
use crate::tensor::{Rng, Tape};

const EPOCH_STREAM: u64 = 0x6570_6f63;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Weight of the classification term.
    pub lambda: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Zero the optimizer moments at each warm restart.
    pub reset_moments_on_restart: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lambda: 1.0,
            weight_decay: 1e-4,
            grad_clip: Some(5.0),
            reset_moments_on_restart: false,
        }
    }
}

/// Parameters captured at the end of a learning-rate cycle, rounded to f32.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub cycle_index: usize,
    pub params: ParamStore,
    /// Epochs completed when captured.
    pub epoch: usize,
    pub val_min_ade: Option<f64>,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub cycle: usize,
    pub lr: f64,
    pub train_loss: f64,
    #[serde(rename = "val_minADE")]
    pub val_min_ade: Option<f64>,
    #[serde(rename = "val_minFDE")]
    pub val_min_fde: Option<f64>,
    #[serde(rename = "val_MR")]
    pub val_mr: Option<f64>,
}

/// Everything needed to continue after cycle `next_cycle - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResumeState {
    pub next_cycle: usize,
    pub params: ParamStore,
    pub optimizer: AdamW,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub epoch: usize,
    pub cycle: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last completed cycle (or the initial ones).
    pub model: Model,
    pub snapshots: Vec<Snapshot>,
    pub log: Vec<EpochLog>,
    pub diverged: Option<Divergence>,
}

/// Observers called as training progresses.
pub trait TrainHooks {
    fn on_epoch(&mut self, _log: &EpochLog) -> Result<(), TrainError> {
        Ok(())
    }

    fn on_snapshot(&mut self, _snapshot: &Snapshot, _state: &ResumeState) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainHooks for () {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    pub model: ModelConfig,
    pub schedule: SchedulerConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

/// Gradient of one scenario's share of the batch loss, plus that share.
fn scenario_gradient(
    model: &Model,
    s: &Scenario,
    agents_in_batch: usize,
    lambda: f64,
    mut dropout: Option<Rng>,
) -> Result<Option<(Vec<Vec<f64>>, f64)>, TrainError> {
    let mut tape = Tape::new();
    let params = model.params.bind(&mut tape, true);
    let mut cx = Ctx::new(&mut tape, &params);
    cx.dropout_rng = dropout.as_mut();
    let out = model.forward(&mut cx, s)?;
    let Some(terms) = scenario_loss_terms(&mut tape, &out, s)? else {
        return Ok(None);
    };
    let weighted = tape.scale(terms.cls, lambda);
    let loss = tape.add(terms.reg, weighted)?;
    let loss = tape.scale(loss, 1.0 / agents_in_batch as f64);
    let value = tape.item(loss);
    let grads = tape.backward(loss)?;
    let per_param = params
        .iter()
        .zip(model.params.iter())
        .map(|(v, p)| grads.get(*v).map_or_else(|| vec![0.0; p.data.len()], <[f64]>::to_vec))
        .collect();
    Ok(Some((per_param, value)))
}

type ScenarioGrad = Result<Option<(Vec<Vec<f64>>, f64)>, TrainError>;

/// Batch gradient and loss. Per-scenario gradients are summed in batch
/// order, so the result does not depend on the worker count.
fn batch_gradient(
    model: &Model,
    batch: &[&Scenario],
    setup: &TrainSetup,
    rng: &Rng,
    threads: usize,
) -> Result<(Vec<Vec<f64>>, f64), TrainError> {
    let agents: usize = batch
        .iter()
        .map(|s| (0..s.num_agents()).filter(|&a| s.is_trainable(a)).count())
        .sum();
    if agents == 0 {
        return Err(TrainError::InvalidInput("batch has no trainable agent".into()));
    }
    let lambda = setup.train.lambda;
    let dropout = |i: usize| (setup.model.dropout > 0.0).then(|| rng.fork(i as u64 + 1));
    let results: Vec<ScenarioGrad> = if threads <= 1 || batch.len() == 1 {
        batch
            .iter()
            .enumerate()
            .map(|(i, s)| scenario_gradient(model, s, agents, lambda, dropout(i)))
            .collect()
    } else {
        let chunk = batch.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .enumerate()
                .map(|(c, part)| {
                    let dropout = &dropout;
                    scope.spawn(move || {
                        part.iter()
                            .enumerate()
                            .map(|(j, s)| scenario_gradient(model, s, agents, lambda, dropout(c * chunk + j)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    };
    let mut total: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
    let mut loss = 0.0;
    for r in results {
        if let Some((grads, value)) = r? {
            loss += value;
            for (t, g) in total.iter_mut().zip(&grads) {
                for (a, b) in t.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }
    Ok((total, loss))
}

fn clip(grads: &mut [Vec<f64>], max_norm: f64) {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

fn validate(model: &Model, val: &[Scenario], threads: usize) -> Result<Option<MetricsReport>, TrainError> {
    if val.is_empty() {
        return Ok(None);
    }
    let errors = focal_errors(model, val, threads)?;
    Ok(MetricsReport::from_errors(&errors).ok())
}

/// The log as JSON lines, one record per epoch.
pub fn log_jsonl(log: &[EpochLog]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("log record serializes") + "\n")
        .collect()
}

/// Train with warm restarts and capture one snapshot per cycle.
pub fn train(dataset: &DatasetSplit, setup: &TrainSetup) -> Result<TrainOutcome, TrainError> {
    train_with(dataset, setup, None, &mut ())
}

/// As [`train`], optionally continuing from `resume`, reporting through
/// `hooks`. A non-finite loss or gradient stops training; the outcome keeps
/// the snapshots taken so far and the last good parameters.
pub fn train_with(
    dataset: &DatasetSplit,
    setup: &TrainSetup,
    resume: Option<ResumeState>,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome, TrainError> {
    setup.schedule.validate()?;
    if setup.train.batch_size == 0 {
        return Err(TrainError::InvalidInput("batch_size must be at least 1".into()));
    }
    if dataset.train.is_empty() {
        return Err(TrainError::InvalidInput("empty training set".into()));
    }
    let mut model = Model::new(setup.model.clone(), setup.seed)?;
    let (start, mut opt) = match resume {
        Some(state) => {
            model = model.with_params(state.params)?;
            if state.optimizer.first_moment.len() != model.params.len() {
                return Err(TrainError::ArchitectureMismatch("optimizer state does not match the model".into()));
            }
            (state.next_cycle, state.optimizer)
        }
        None => {
            let opt = AdamW::new(&model.params, setup.train.weight_decay);
            (0, opt)
        }
    };
    let sched = &setup.schedule;
    let threads = eval_threads();
    let batches = dataset.train.len().div_ceil(setup.train.batch_size);
    let root = Rng::seed(setup.seed);
    let mut outcome = TrainOutcome {
        model: model.clone(),
        snapshots: Vec::new(),
        log: Vec::new(),
        diverged: None,
    };
    for cycle in start..sched.num_cycles {
        if cycle > 0 && setup.train.reset_moments_on_restart {
            opt.reset();
        }
        for e in 0..sched.cycle_length {
            let epoch = cycle * sched.cycle_length + e;
            let epoch_rng = root.fork(EPOCH_STREAM ^ epoch as u64);
            let mut order: Vec<usize> = (0..dataset.train.len()).collect();
            epoch_rng.fork(0).shuffle(&mut order);
            let mut loss_sum = 0.0;
            let mut failure = None;
            for (b, idx) in order.chunks(setup.train.batch_size).enumerate() {
                let lr = lr_at(sched, e as f64 + b as f64 / batches as f64)?;
                let batch: Vec<&Scenario> = idx.iter().map(|&i| &dataset.train[i]).collect();
                let step = batch_gradient(&model, &batch, setup, &epoch_rng.fork(b as u64 + 1), threads).and_then(|(mut grads, loss)| {
                    if !loss.is_finite() {
                        return Err(TrainError::Diverged(format!("loss became {loss}")));
                    }
                    if let Some(c) = setup.train.grad_clip {
                        clip(&mut grads, c);
                    }
                    opt.update(&mut model.params, &grads, lr)?;
                    Ok(loss)
                });
                match step {
                    Ok(loss) => loss_sum += loss,
                    Err(err @ (TrainError::NonFiniteGradient { .. } | TrainError::Diverged(_) | TrainError::Model(_))) => {
                        failure = Some(err.to_string());
                        break;
                    }
                    Err(err) => return Err(err),
                }
            }
            if let Some(reason) = failure {
                outcome.diverged = Some(Divergence { epoch, cycle, reason });
                return Ok(outcome);
            }
            let cycle_end = e + 1 == sched.cycle_length;
            if cycle_end {
                model.params = model.params.quantized_f32();
            }
            let val = validate(&model, &dataset.val, threads)?;
            let record = EpochLog {
                epoch,
                cycle,
                lr: lr_at(sched, e as f64)?,
                train_loss: loss_sum / batches as f64,
                val_min_ade: val.map(|m| m.min_ade),
                val_min_fde: val.map(|m| m.min_fde),
                val_mr: val.map(|m| m.miss_rate),
            };
            hooks.on_epoch(&record)?;
            outcome.log.push(record);
            if cycle_end {
                let snapshot = Snapshot {
                    cycle_index: cycle,
                    params: model.params.clone(),
                    epoch: epoch + 1,
                    val_min_ade: val.map(|m| m.min_ade),
                };
                let state = ResumeState {
                    next_cycle: cycle + 1,
                    params: model.params.clone(),
                    optimizer: opt.clone(),
                };
                hooks.on_snapshot(&snapshot, &state)?;
                outcome.snapshots.push(snapshot);
                outcome.model = model.clone();
            }
        }
    }
    Ok(outcome)
}
