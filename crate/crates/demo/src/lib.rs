//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The plain Rust API (`dyt_values`, `lr_values`, [`Session`]) is what the
//! native tests exercise; the `#[wasm_bindgen]` wrappers only convert errors.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dyttp::backbone::{Model, ModelConfig};
use dyttp::data::{generate_synthetic, DatasetSplit, GenConfig, Point, Scenario};
use dyttp::evaluation::{evaluate, ConstantVelocity, MetricsReport, Predictor};
use dyttp::layers::ParamStore;
use dyttp::tensor::{Tape, Tensor};
use dyttp::training::{
    lr_at, train_with, Ensemble, EnsembleConfig, EpochLog, ResumeState, SchedulerConfig, Snapshot, TrainConfig, TrainError, TrainHooks,
    TrainSetup,
};

/// `gamma · tanh(alpha · x) + beta` at `points` evenly spaced x in
/// [x_min, x_max], through the same kernel the model uses.
pub fn dyt_values(alpha: f64, gamma: f64, beta: f64, x_min: f64, x_max: f64, points: usize) -> Result<Vec<f64>, String> {
    if points < 2 || x_max.partial_cmp(&x_min) != Some(std::cmp::Ordering::Greater) {
        return Err("need at least two points and x_max > x_min".into());
    }
    let xs: Vec<f64> = (0..points)
        .map(|i| x_min + (x_max - x_min) * i as f64 / (points - 1) as f64)
        .collect();
    let mut tape = Tape::inference();
    let x = tape.constant(Tensor::new([points, 1], xs).map_err(|e| e.to_string())?);
    let a = tape.constant(Tensor::from_vec(vec![alpha]));
    let g = tape.constant(Tensor::from_vec(vec![gamma]));
    let b = tape.constant(Tensor::from_vec(vec![beta]));
    let y = tape.dyt(x, a, g, b).map_err(|e| e.to_string())?;
    Ok(tape.value(y).to_vec())
}

/// Learning rate sampled `per_epoch` times per epoch across every cycle,
/// plus the final minimum.
pub fn lr_values(eta_min: f64, eta_max: f64, cycle_length: usize, num_cycles: usize, per_epoch: usize) -> Result<Vec<f64>, String> {
    let cfg = SchedulerConfig {
        eta_min,
        eta_max,
        cycle_length,
        num_cycles,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    if per_epoch == 0 {
        return Err("per_epoch must be at least 1".into());
    }
    let steps = cycle_length * per_epoch;
    let mut out = Vec::with_capacity(num_cycles * steps + 1);
    for _ in 0..num_cycles {
        for i in 0..steps {
            out.push(lr_at(&cfg, i as f64 / per_epoch as f64).map_err(|e| e.to_string())?);
        }
    }
    out.push(lr_at(&cfg, cycle_length as f64).map_err(|e| e.to_string())?);
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct ModeView {
    pub prob: f64,
    pub points: Vec<Point>,
}

/// Everything the page draws for one scenario.
#[derive(Debug, Serialize)]
pub struct ScenarioView {
    pub id: String,
    pub kind: String,
    pub history: Vec<Point>,
    pub future: Vec<Point>,
    pub others: Vec<Vec<Point>>,
    pub lanes: Vec<Vec<Point>>,
    pub modes: Vec<ModeView>,
    pub constant_velocity: Vec<Point>,
    pub min_ade: Option<f64>,
    pub min_fde: Option<f64>,
}

fn valid_points(points: &[Point], mask: &[bool]) -> Vec<Point> {
    points.iter().zip(mask).filter(|(_, &v)| v).map(|(p, _)| *p).collect()
}

struct Capture<'a> {
    state: &'a mut Option<ResumeState>,
    snapshots: &'a mut Vec<ParamStore>,
}

impl TrainHooks for Capture<'_> {
    fn on_snapshot(&mut self, s: &Snapshot, state: &ResumeState) -> Result<(), TrainError> {
        self.snapshots.push(s.params.clone());
        *self.state = Some(state.clone());
        Ok(())
    }
}

/// A small synthetic dataset and model trained one cycle at a time.
pub struct Session {
    data: DatasetSplit,
    setup: TrainSetup,
    model: Model,
    state: Option<ResumeState>,
    snapshots: Vec<ParamStore>,
    log: Vec<EpochLog>,
}

impl Session {
    pub fn new(seed: u64, count: usize, width: usize, modes: usize, cycle_length: usize) -> Result<Self, String> {
        if count < 5 {
            return Err("need at least 5 scenarios".into());
        }
        let data = generate_synthetic(count, seed, &GenConfig::default());
        let setup = TrainSetup {
            model: ModelConfig {
                width,
                heads: 2,
                modes,
                ..ModelConfig::default()
            },
            schedule: SchedulerConfig {
                cycle_length,
                num_cycles: 1,
                ..SchedulerConfig::default()
            },
            train: TrainConfig::default(),
            seed,
        };
        let model = Model::new(setup.model.clone(), seed).map_err(|e| e.to_string())?;
        Ok(Self {
            data,
            setup,
            model,
            state: None,
            snapshots: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn cycles_done(&self) -> usize {
        self.snapshots.len()
    }

    pub fn val_len(&self) -> usize {
        self.data.val.len()
    }

    /// Run one more warm-restart cycle; returns its epoch records.
    pub fn train_cycle(&mut self) -> Result<Vec<EpochLog>, String> {
        let mut setup = self.setup.clone();
        setup.schedule.num_cycles = self.snapshots.len() + 1;
        let resume = self.state.take();
        let mut hooks = Capture {
            state: &mut self.state,
            snapshots: &mut self.snapshots,
        };
        let out = train_with(&self.data, &setup, resume, &mut hooks).map_err(|e| e.to_string())?;
        if let Some(d) = out.diverged {
            return Err(format!("training diverged in epoch {}: {}", d.epoch, d.reason));
        }
        self.model = out.model;
        self.log.extend(out.log.iter().cloned());
        Ok(out.log)
    }

    fn predictor(&self, ensemble: bool) -> Result<Box<dyn Predictor>, String> {
        if ensemble && self.snapshots.len() > 1 {
            let refs: Vec<&ParamStore> = self.snapshots.iter().collect();
            let e = Ensemble::new(&self.model, &refs, &EnsembleConfig::default()).map_err(|e| e.to_string())?;
            Ok(Box::new(e))
        } else {
            Ok(Box::new(self.model.clone()))
        }
    }

    pub fn metrics(&self, ensemble: bool) -> Result<MetricsReport, String> {
        evaluate(self.predictor(ensemble)?.as_ref(), &self.data.val).map_err(|e| e.to_string())
    }

    pub fn view(&self, index: usize, ensemble: bool) -> Result<ScenarioView, String> {
        let s: &Scenario = self.data.val.get(index).ok_or_else(|| format!("no validation scenario {index}"))?;
        let pred = self.predictor(ensemble)?.predict_focal(s).map_err(|e| e.to_string())?;
        let f = s.focal;
        let others = (0..s.num_agents())
            .filter(|&a| a != f)
            .map(|a| {
                let mut p = valid_points(s.history(a), s.history_mask(a));
                p.extend(valid_points(s.future(a), s.future_mask(a)));
                p
            })
            .collect();
        Ok(ScenarioView {
            id: s.id.clone(),
            kind: format!("{:?}", s.kind),
            history: valid_points(s.history(f), s.history_mask(f)),
            future: valid_points(s.future(f), s.future_mask(f)),
            others,
            lanes: s.lanes.iter().map(|l| l.points.clone()).collect(),
            modes: (0..pred.modes)
                .map(|k| ModeView {
                    prob: pred.mode_probs[k],
                    points: pred.trajectory(k),
                })
                .collect(),
            constant_velocity: ConstantVelocity::extrapolate(s, f),
            min_ade: dyttp::evaluation::min_ade(&pred, s.future(f), s.future_mask(f)),
            min_fde: dyttp::evaluation::min_fde(&pred, s.future(f), s.future_mask(f)),
        })
    }
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("view serializes")
}

#[wasm_bindgen(js_name = dytCurve)]
pub fn dyt_curve(alpha: f64, gamma: f64, beta: f64, x_min: f64, x_max: f64, points: usize) -> Result<Vec<f64>, JsError> {
    js(dyt_values(alpha, gamma, beta, x_min, x_max, points))
}

#[wasm_bindgen(js_name = lrCurve)]
pub fn lr_curve(eta_min: f64, eta_max: f64, cycle_length: usize, num_cycles: usize, per_epoch: usize) -> Result<Vec<f64>, JsError> {
    js(lr_values(eta_min, eta_max, cycle_length, num_cycles, per_epoch))
}

#[wasm_bindgen(js_name = Session)]
pub struct JsSession(Session);

#[wasm_bindgen(js_class = Session)]
impl JsSession {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, count: usize, width: usize, modes: usize, cycle_length: usize) -> Result<JsSession, JsError> {
        js(Session::new(seed, count, width, modes, cycle_length)).map(JsSession)
    }

    #[wasm_bindgen(js_name = cyclesDone)]
    pub fn cycles_done(&self) -> usize {
        self.0.cycles_done()
    }

    #[wasm_bindgen(js_name = valLen)]
    pub fn val_len(&self) -> usize {
        self.0.val_len()
    }

    /// JSON array of epoch records.
    #[wasm_bindgen(js_name = trainCycle)]
    pub fn train_cycle(&mut self) -> Result<String, JsError> {
        js(self.0.train_cycle()).map(|log| to_json(&log))
    }

    /// JSON metrics over the validation split.
    pub fn metrics(&self, ensemble: bool) -> Result<String, JsError> {
        js(self.0.metrics(ensemble)).map(|m| to_json(&m))
    }

    /// JSON view of one validation scenario with predictions.
    pub fn view(&self, index: usize, ensemble: bool) -> Result<String, JsError> {
        js(self.0.view(index, ensemble)).map(|v| to_json(&v))
    }
}
