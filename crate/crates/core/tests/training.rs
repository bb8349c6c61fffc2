mod common;

use common::{tiny_config, tiny_scenario};
use dyttp::backbone::{Model, ModelConfig, ModelOutput, PredictionSet};
use dyttp::data::{generate_synthetic, DatasetSplit, GenConfig, Point};
use dyttp::evaluation::Predictor;
use dyttp::layers::{Ctx, NormKind, ParamStore};
use dyttp::tensor::{grad_check_many, Rng, Tape, Tensor};
use dyttp::training::*;
use proptest::prelude::*;

/// Closed forms evaluated by an independent script.
const NLL_UNIT_SCALE_F30: f64 = 41.58883083359672; // 30 * 2 * ln 2
const LN_6: f64 = 1.791759469228055;
#[allow(clippy::approx_constant)]
const LN_2: f64 = 0.6931471805599453;
const CE_AT_FLOOR: f64 = 27.631021115928547; // -ln 1e-12

fn set(modes: Vec<Vec<Point>>, scale: f64, probs: Vec<f64>) -> PredictionSet {
    let f = modes[0].len();
    PredictionSet {
        modes: modes.len(),
        pred_len: f,
        locations: modes.iter().flatten().flatten().copied().collect(),
        scales: vec![scale; modes.len() * f * 2],
        mode_probs: probs,
    }
}

fn path(f: usize, dx: f64, dy: f64) -> Vec<Point> {
    (0..f).map(|k| [k as f64 * 1.5 + dx, -(k as f64) * 0.3 + dy]).collect()
}

#[test]
fn laplace_nll_examples() {
    let gt = path(30, 0.0, 0.0);
    let valid = vec![true; 30];
    let p = set(vec![gt.clone()], 1.0, vec![1.0]);
    assert!((regression_nll(&p, 0, &gt, &valid).unwrap() - NLL_UNIT_SCALE_F30).abs() < 1e-12);
    let p = set(vec![gt.clone()], 0.5, vec![1.0]);
    assert_eq!(regression_nll(&p, 0, &gt, &valid).unwrap(), 0.0);

    let near = set(vec![path(30, 0.25, -0.5)], 0.8, vec![1.0]);
    let far = set(vec![path(30, 0.5, -1.0)], 0.8, vec![1.0]);
    let diff = regression_nll(&far, 0, &gt, &valid).unwrap() - regression_nll(&near, 0, &gt, &valid).unwrap();
    assert!((diff - 30.0 * (0.25 + 0.5) / 0.8).abs() < 1e-9);

    let mut masked = vec![true; 30];
    masked[29] = false;
    let p = set(vec![gt.clone()], 1.0, vec![1.0]);
    assert!((regression_nll(&p, 0, &gt, &masked).unwrap() - 29.0 * 2.0 * LN_2).abs() < 1e-12);
    let bad = set(vec![gt.clone()], 0.0, vec![1.0]);
    assert!(regression_nll(&bad, 0, &gt, &valid).is_err());
}

#[test]
fn best_mode_examples() {
    let gt = path(5, 0.0, 0.0);
    let valid = vec![true; 5];
    let p = set(vec![gt.clone(), path(5, 1.0, 0.0)], 1.0, vec![0.5, 0.5]);
    assert_eq!(select_best_mode(&p, &gt, &valid), 0);
    let p = set(vec![gt.clone(); 3], 1.0, vec![1.0 / 3.0; 3]);
    assert_eq!(select_best_mode(&p, &gt, &valid), 0);
    let p = set(
        vec![path(5, 2.0, 0.0), path(5, 0.0, 0.5), path(5, -1.1, 0.0)],
        1.0,
        vec![1.0 / 3.0; 3],
    );
    assert_eq!(select_best_mode(&p, &gt, &valid), 1);
}

#[test]
fn cross_entropy_examples() {
    assert_eq!(classification_ce(&[0.0, 1.0, 0.0], 1), 0.0);
    assert!((classification_ce(&[1.0 / 6.0; 6], 4) - LN_6).abs() < 1e-12);
    assert!((classification_ce(&[0.5, 0.5], 0) - LN_2).abs() < 1e-12);
    assert!((classification_ce(&[1.0, 0.0], 1) - CE_AT_FLOOR).abs() < 1e-9);
}

#[test]
fn total_loss_examples() {
    let gt = path(30, 0.0, 0.0);
    let valid = vec![true; 30];
    let perfect = set(vec![gt.clone(), path(30, 3.0, 3.0)], 0.5, vec![1.0, 0.0]);
    let l = total_loss([(&perfect, gt.as_slice(), valid.as_slice())], 1.0).unwrap();
    assert_eq!((l.total, l.reg, l.cls), (0.0, 0.0, 0.0));

    let p = set(vec![path(30, 0.3, 0.1), path(30, 2.0, 2.0)], 0.7, vec![0.4, 0.6]);
    let l0 = total_loss([(&p, gt.as_slice(), valid.as_slice())], 0.0).unwrap();
    assert_eq!(l0.total, l0.reg);
    let l1 = total_loss([(&p, gt.as_slice(), valid.as_slice())], 1.0).unwrap();
    assert_eq!(l1.total, l1.reg + l1.cls);
    assert!((l1.cls - (-(0.4f64).ln())).abs() < 1e-15);
    assert!(total_loss(std::iter::empty(), 1.0).is_err());
}

/// Leaf outputs for one agent so gradients can be read directly.
fn leaf_output(tape: &mut Tape, p: &PredictionSet) -> ModelOutput {
    let (k, f) = (p.modes, p.pred_len);
    ModelOutput {
        locations: tape.leaf(Tensor::new([1, k, f, 2], p.locations.clone()).unwrap(), true),
        scales: tape.leaf(Tensor::new([1, k, f, 2], p.scales.clone()).unwrap(), true),
        mode_probs: tape.leaf(Tensor::new([1, k], p.mode_probs.clone()).unwrap(), true),
        origins: vec![[0.0, 0.0]],
    }
}

fn one_agent_scenario(gt: &[Point]) -> dyttp::data::Scenario {
    let mut s = tiny_scenario();
    s.pred_len = gt.len();
    s.obs_len = 4;
    s.histories.truncate(4);
    s.history_valid.truncate(4);
    s.futures = gt.to_vec();
    s.future_valid = vec![true; gt.len()];
    s
}

#[test]
fn tape_loss_matches_closed_form() {
    let gt = path(3, 0.0, 0.0);
    let s = one_agent_scenario(&gt);
    let p = set(
        vec![path(3, 0.4, -0.2), path(3, 1.0, 1.5), path(3, -0.1, 0.05)],
        0.6,
        vec![0.2, 0.3, 0.5],
    );
    let mut tape = Tape::new();
    let out = leaf_output(&mut tape, &p);
    let vars = batch_loss(&mut tape, &[(&out, &s)], 1.0).unwrap();
    let want = total_loss([(&p, gt.as_slice(), s.future_valid.as_slice())], 1.0).unwrap();
    assert!((tape.item(vars.total) - want.total).abs() < 1e-12);
    assert!((tape.item(vars.reg) - want.reg).abs() < 1e-12);
    assert!((tape.item(vars.cls) - want.cls).abs() < 1e-12);
    assert_eq!(tape.item(vars.total), tape.item(vars.reg) + tape.item(vars.cls));
}

#[test]
fn regression_gradient_skips_losing_modes() {
    let gt = path(3, 0.0, 0.0);
    let s = one_agent_scenario(&gt);
    for winner in 0..3 {
        let mut modes = vec![path(3, 2.0, 2.0), path(3, -2.0, 1.0), path(3, 1.0, -3.0)];
        modes[winner] = path(3, 0.1, 0.1);
        let p = set(modes, 0.9, vec![0.3, 0.3, 0.4]);
        let mut tape = Tape::new();
        let out = leaf_output(&mut tape, &p);
        let terms = scenario_loss_terms(&mut tape, &out, &s).unwrap().unwrap();
        let grads = tape.backward(terms.reg).unwrap();
        let g = grads.get(out.locations).unwrap();
        for (i, v) in g.iter().enumerate() {
            if i / 6 != winner {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(g[winner * 6..winner * 6 + 6].iter().any(|v| *v != 0.0));
        assert!(grads.get(out.mode_probs).is_none());
    }
}

#[test]
fn tiny_backbone_passes_grad_check_through_total_loss() {
    for kind in [NormKind::DyT, NormKind::LayerNorm] {
        let model = Model::new(tiny_config(kind), 31).unwrap();
        let s = tiny_scenario();
        let inputs: Vec<Tensor> = model
            .params
            .iter()
            .map(|p| Tensor::new(p.shape.clone(), p.data.to_vec()).unwrap())
            .collect();
        let err = grad_check_many(
            |tape, vars| {
                let mut cx = Ctx::new(tape, vars);
                let out = model.forward(&mut cx, &s)?;
                let loss = batch_loss(tape, &[(&out, &s)], 1.0).map_err(|e| dyttp::tensor::TensorError::Invalid(e.to_string()))?;
                Ok(loss.total)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{kind:?}: {err}");
    }
}

#[test]
fn schedule_examples() {
    let cfg = SchedulerConfig::default();
    assert!((lr_at(&cfg, 0.0).unwrap() - cfg.eta_max).abs() < 1e-15);
    assert_eq!(lr_at(&cfg, 8.0).unwrap(), cfg.eta_min);
    assert!((lr_at(&cfg, 4.0).unwrap() - (cfg.eta_max + cfg.eta_min) / 2.0).abs() < 1e-15);
    assert!(lr_at(&cfg, -0.1).is_err());
    assert!(lr_at(&cfg, 8.01).is_err());
    let mut prev = f64::INFINITY;
    for i in 0..=800 {
        let lr = lr_at(&cfg, i as f64 / 100.0).unwrap();
        assert!(lr <= prev);
        prev = lr;
    }
    for bad in [
        SchedulerConfig {
            eta_min: 1e-3,
            eta_max: 1e-3,
            ..cfg.clone()
        },
        SchedulerConfig {
            eta_min: -1.0,
            ..cfg.clone()
        },
        SchedulerConfig {
            cycle_length: 0,
            ..cfg.clone()
        },
        SchedulerConfig {
            num_cycles: 0,
            ..cfg.clone()
        },
    ] {
        assert!(bad.validate().is_err());
    }
}

fn one_param(value: f64) -> ParamStore {
    let mut store = ParamStore::new();
    store.add("w", &[1], dyttp::layers::Init::Const(value), &Rng::seed(0));
    store
}

#[test]
fn adamw_examples() {
    let mut p = one_param(0.7);
    let mut opt = AdamW::new(&p, 0.0);
    opt.update(&mut p, &[vec![0.0]], 1e-2).unwrap();
    assert_eq!(p.get(dyttp::layers::ParamId(0)).data[0], 0.7);

    let mut p = one_param(1.0);
    let mut opt = AdamW::new(&p, 1e-4);
    let mut w = 1.0;
    for _ in 0..50 {
        let g = vec![w];
        opt.update(&mut p, &[g], 1e-2).unwrap();
        let next = p.get(dyttp::layers::ParamId(0)).data[0];
        assert!(next < w);
        w = next;
    }
    assert_eq!(opt.step, 50);

    let err = opt.update(&mut p, &[vec![f64::NAN]], 1e-2).unwrap_err();
    assert!(matches!(&err, TrainError::NonFiniteGradient { param } if param == "w"), "{err}");
    assert_eq!(p.get(dyttp::layers::ParamId(0)).data[0], w);
    opt.reset();
    assert_eq!((opt.step, opt.first_moment[0][0]), (0, 0.0));
}

fn small_setup(cycles: usize) -> (DatasetSplit, TrainSetup) {
    let data = generate_synthetic(30, 3, &GenConfig::default());
    let setup = TrainSetup {
        model: ModelConfig {
            width: 8,
            heads: 2,
            modes: 2,
            ..ModelConfig::default()
        },
        schedule: SchedulerConfig {
            cycle_length: 2,
            num_cycles: cycles,
            ..SchedulerConfig::default()
        },
        train: TrainConfig {
            batch_size: 8,
            ..TrainConfig::default()
        },
        seed: 5,
    };
    (data, setup)
}

#[test]
fn training_captures_one_snapshot_per_cycle() {
    let (data, setup) = small_setup(3);
    let out = train(&data, &setup).unwrap();
    assert!(out.diverged.is_none());
    let cycles: Vec<usize> = out.snapshots.iter().map(|s| s.cycle_index).collect();
    assert_eq!(cycles, vec![0, 1, 2]);
    assert_eq!(out.snapshots.iter().map(|s| s.epoch).collect::<Vec<_>>(), vec![2, 4, 6]);
    assert_eq!(out.log.len(), 6);
    for (i, rec) in out.log.iter().enumerate() {
        assert_eq!((rec.epoch, rec.cycle), (i, i / 2));
        assert!(rec.train_loss.is_finite() && rec.val_min_ade.is_some());
    }
    assert_eq!(out.log[0].lr, setup.schedule.eta_max);
    for snap in &out.snapshots {
        assert!(snap.params.iter().all(|p| p.data.iter().all(|&v| v == v as f32 as f64)));
    }
    assert_eq!(out.model.params, out.snapshots[2].params);
    assert_eq!(out.snapshots[2].val_min_ade, out.log[5].val_min_ade);
}

#[test]
fn training_is_deterministic_and_thread_independent() {
    let (data, setup) = small_setup(2);
    let a = train(&data, &setup).unwrap();
    let b = train(&data, &setup).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model.params, b.model.params);
    let other = train(&data, &TrainSetup { seed: 6, ..setup.clone() }).unwrap();
    assert_ne!(a.model.params, other.model.params);
}

struct Capture(Vec<ResumeState>);

impl TrainHooks for Capture {
    fn on_snapshot(&mut self, _s: &Snapshot, state: &ResumeState) -> Result<(), TrainError> {
        self.0.push(state.clone());
        Ok(())
    }
}

#[test]
fn resume_continues_exactly() {
    let (data, setup) = small_setup(3);
    let mut cap = Capture(Vec::new());
    let full = train_with(&data, &setup, None, &mut cap).unwrap();
    assert_eq!(cap.0.len(), 3);
    let resumed = train_with(&data, &setup, Some(cap.0[0].clone()), &mut ()).unwrap();
    assert_eq!(resumed.snapshots.len(), 2);
    assert_eq!(resumed.model.params, full.model.params);
    assert_eq!(resumed.log[..], full.log[2..]);
}

#[test]
fn divergence_keeps_last_good_parameters() {
    let (data, mut setup) = small_setup(2);
    setup.schedule.eta_max = 1e12;
    setup.train.grad_clip = None;
    let out = train(&data, &setup).unwrap();
    let d = out.diverged.expect("huge learning rate diverges");
    assert_eq!(d.cycle, 0);
    assert!(out.snapshots.is_empty());
    assert_eq!(out.model.params, Model::new(setup.model.clone(), setup.seed).unwrap().params);
}

#[test]
fn dropout_training_is_deterministic() {
    let (data, mut setup) = small_setup(1);
    setup.model.dropout = 0.1;
    let a = train(&data, &setup).unwrap();
    let b = train(&data, &setup).unwrap();
    assert_eq!(a.model.params, b.model.params);
}

fn trained_model() -> (Model, Vec<dyttp::data::Scenario>) {
    let (data, setup) = small_setup(2);
    (train(&data, &setup).unwrap().model, data.val)
}

#[test]
fn duplicated_snapshots_match_single_model() {
    let (model, val) = trained_model();
    let copies = vec![&model.params; 3];
    for strategy in [EnsembleStrategy::PredictionAverage, EnsembleStrategy::ParameterAverage] {
        let cfg = EnsembleConfig {
            strategy,
            snapshots_used: None,
        };
        let three = Ensemble::new(&model, &copies, &cfg).unwrap();
        let one = Ensemble::new(&model, &copies[..1], &cfg).unwrap();
        for s in &val {
            let plain = model.predict(s).unwrap();
            assert_eq!(three.predict(s).unwrap(), plain);
            assert_eq!(one.predict(s).unwrap(), plain);
        }
    }
}

#[test]
fn symmetric_members_average_to_the_midpoint() {
    let base = set(vec![path(4, 0.0, 0.0), path(4, 5.0, 5.0)], 1.0, vec![0.25, 0.75]);
    let shift = |d: f64| {
        let mut p = base.clone();
        p.locations.iter_mut().for_each(|v| *v += d);
        p
    };
    let avg = average_predictions(&[vec![shift(0.5)], vec![shift(-0.5)]]).unwrap();
    for (a, b) in avg[0].locations.iter().zip(&base.locations) {
        assert!((a - b).abs() < 1e-12);
    }
    let mut tilted = base.clone();
    tilted.mode_probs = vec![0.75, 0.25];
    let avg = average_predictions(&[vec![base.clone()], vec![tilted]]).unwrap();
    assert_eq!(avg[0].mode_probs, vec![0.5, 0.5]);
}

#[test]
fn ensemble_selection_and_mismatch() {
    let (model, val) = trained_model();
    let fresh = Model::new(model.cfg.clone(), 99).unwrap();
    let snaps = vec![&fresh.params, &model.params];
    let last = Ensemble::new(
        &model,
        &snaps,
        &EnsembleConfig {
            snapshots_used: Some(1),
            ..EnsembleConfig::default()
        },
    )
    .unwrap();
    assert_eq!(last.members.len(), 1);
    assert_eq!(last.predict(&val[0]).unwrap(), model.predict(&val[0]).unwrap());
    let avg = Ensemble::new(
        &model,
        &snaps,
        &EnsembleConfig {
            strategy: EnsembleStrategy::ParameterAverage,
            snapshots_used: None,
        },
    )
    .unwrap();
    assert_eq!(avg.members.len(), 1);
    assert_eq!(avg.snapshots, 2);
    assert_eq!(avg.name(), "ensemble-parameter_average-2");
    assert_eq!(last.name(), "ensemble-prediction_average-1");
    let both = average_params(&snaps).unwrap();
    assert_eq!(avg.members[0].params, both);

    let wider = Model::new(
        ModelConfig {
            width: 12,
            ..model.cfg.clone()
        },
        1,
    )
    .unwrap();
    assert!(matches!(
        Ensemble::new(&model, &[&wider.params], &EnsembleConfig::default()),
        Err(TrainError::ArchitectureMismatch(_))
    ));
    assert!(Ensemble::new(&model, &[], &EnsembleConfig::default()).is_err());
    assert!(Ensemble::new(
        &model,
        &snaps,
        &EnsembleConfig {
            snapshots_used: Some(0),
            ..EnsembleConfig::default()
        }
    )
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn total_is_reg_plus_weighted_cls(seed in any::<u64>(), lambda in 0.0f64..3.0, k in 1usize..5) {
        let mut rng = Rng::seed(seed);
        let gt = path(6, rng.normal(), rng.normal());
        let valid: Vec<bool> = (0..6).map(|i| i == 5 || rng.uniform() < 0.8).collect();
        let modes = (0..k).map(|_| path(6, rng.normal(), rng.normal())).collect();
        let mut probs: Vec<f64> = (0..k).map(|_| rng.uniform() + 1e-3).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        let p = set(modes, rng.uniform_in(0.1, 2.0), probs);
        let l = total_loss([(&p, gt.as_slice(), valid.as_slice())], lambda).unwrap();
        prop_assert!((l.total - (l.reg + lambda * l.cls)).abs() <= 1e-12);
        prop_assert!(l.cls >= 0.0);
    }

    #[test]
    fn cross_entropy_is_zero_only_at_certainty(p in 0.0f64..=1.0) {
        let ce = classification_ce(&[p, 1.0 - p], 0);
        prop_assert!(ce >= 0.0);
        prop_assert_eq!(ce == 0.0, p == 1.0);
    }

    #[test]
    fn lr_matches_closed_form(e in 0.0f64..=8.0) {
        let cfg = SchedulerConfig::default();
        let want = cfg.eta_min + 0.5 * (cfg.eta_max - cfg.eta_min) * (1.0 + (std::f64::consts::PI * e / 8.0).cos());
        prop_assert!((lr_at(&cfg, e).unwrap() - want).abs() <= 1e-12);
    }
}
