mod common;

use common::{tiny_config, tiny_scenario};
use dyttp::backbone::{Model, ModelConfig};
use dyttp::data::{generate_scenario, GenConfig, Lane, Scenario, ScenarioKind};
use dyttp::layers::{Ctx, NormKind};
use dyttp::tensor::{grad_check_many, Rng, Tape, Tensor};
use proptest::prelude::*;

fn small_config(norm_kind: NormKind) -> ModelConfig {
    ModelConfig {
        width: 16,
        heads: 2,
        modes: 3,
        norm_kind,
        ..ModelConfig::default()
    }
}

/// Random non-zero biases so structural checks do not lean on the zero init.
fn perturbed(mut model: Model, seed: u64) -> Model {
    let mut rng = Rng::seed(seed);
    let ids: Vec<_> = model
        .params
        .iter()
        .filter(|p| p.name.ends_with(".bias") || p.name.ends_with(".beta"))
        .map(|p| model.params.id(&p.name).unwrap())
        .collect();
    for id in ids {
        for v in model.params.data_mut(id).iter_mut() {
            *v = rng.uniform_in(-0.3, 0.3);
        }
    }
    model
}

fn scenarios(count: usize, seed: u64) -> Vec<Scenario> {
    (0..count).map(|i| generate_scenario(seed, i, &GenConfig::default()).0).collect()
}

fn single_agent(points: Vec<[f64; 2]>, lanes: Vec<Lane>) -> Scenario {
    let (t, f) = (20, 30);
    let last = *points.last().unwrap();
    Scenario {
        id: "one".into(),
        obs_len: t,
        pred_len: f,
        histories: points,
        history_valid: vec![true; t],
        futures: vec![last; f],
        future_valid: vec![true; f],
        lanes,
        focal: 0,
        kind: ScenarioKind::Unknown,
    }
}

fn with_agent(mut s: Scenario, points: Vec<[f64; 2]>) -> Scenario {
    let last = *points.last().unwrap();
    s.histories.extend(points);
    s.history_valid.extend(vec![true; s.obs_len]);
    s.futures.extend(vec![last; s.pred_len]);
    s.future_valid.extend(vec![true; s.pred_len]);
    s
}

fn walk(x0: f64, y0: f64, vx: f64, vy: f64) -> Vec<[f64; 2]> {
    (0..20).map(|k| [x0 + vx * k as f64, y0 + vy * k as f64]).collect()
}

fn values(model: &Model, s: &Scenario, pick: impl Fn(&dyttp::backbone::StageOutputs) -> dyttp::tensor::Var) -> Vec<f64> {
    let mut tape = Tape::inference();
    let params = model.params.bind(&mut tape, false);
    let mut cx = Ctx::new(&mut tape, &params);
    let (_, stages) = model.encode_stages(&mut cx, s).unwrap();
    tape.value(pick(&stages)).to_vec()
}

#[test]
fn stationary_agent_tokens_are_the_bias_sequence() {
    let model = perturbed(Model::new(small_config(NormKind::DyT), 3).unwrap(), 4);
    let s = single_agent(vec![[12.0, -7.0]; 20], vec![]);
    let tokens = values(&model, &s, |st| st.agent_tokens);

    let mut tape = Tape::inference();
    let params = model.params.bind(&mut tape, false);
    let mut cx = Ctx::new(&mut tape, &params);
    let zero = cx.tape.constant(Tensor::zeros([1, 20, 2]));
    let bias = model.layout.agent_embed.forward(&mut cx, zero).unwrap();
    let pos = cx.p(model.layout.agent_position);
    let expected = cx.tape.add(bias, pos).unwrap();
    assert_eq!(tokens, tape.value(expected));
}

#[test]
fn tokens_ignore_translation() {
    let model = perturbed(Model::new(small_config(NormKind::DyT), 1).unwrap(), 2);
    for s in scenarios(5, 8) {
        let moved = s.translated([100.0, 100.0]);
        assert_eq!(
            values(&model, &s, |st| st.agent_tokens),
            values(&model, &moved, |st| st.agent_tokens)
        );
        assert_eq!(values(&model, &s, |st| st.lane_tokens), values(&model, &moved, |st| st.lane_tokens));
    }
}

#[test]
fn lone_agent_without_lanes() {
    let cfg = small_config(NormKind::DyT);
    let model = Model::new(cfg.clone(), 5).unwrap();
    let s = single_agent(walk(0.0, 0.0, 1.0, 0.5), vec![]);
    let mut tape = Tape::inference();
    let params = model.params.bind(&mut tape, false);
    let mut cx = Ctx::new(&mut tape, &params);
    let (agents, lanes) = model.embed_inputs(&mut cx, &s).unwrap();
    assert_eq!(tape.shape(agents), &[1, 20, cfg.width]);
    assert_eq!(tape.shape(lanes), &[0, cfg.width]);
    let preds = model.predict(&s).unwrap();
    assert_eq!(preds.len(), 1);
    assert!(preds[0].locations.iter().chain(&preds[0].scales).all(|v| v.is_finite()));
}

#[test]
fn distant_agent_does_not_touch_agent_agent_stage() {
    let model = perturbed(Model::new(small_config(NormKind::DyT), 6).unwrap(), 7);
    let lone = single_agent(walk(0.0, 0.0, 1.0, 0.0), vec![]);
    let pair = with_agent(lone.clone(), walk(500.0, 300.0, 0.0, 1.0));
    let d = 16;
    let a = values(&model, &lone, |st| st.agent_agent);
    let b = values(&model, &pair, |st| st.agent_agent);
    assert_eq!(a.len(), 20 * d);
    assert_eq!(a, b[..20 * d]);
    let other = single_agent(walk(500.0, 300.0, 0.0, 1.0), vec![]);
    assert_eq!(values(&model, &other, |st| st.agent_agent), b[20 * d..]);
    // Within range they do interact.
    let near = with_agent(lone.clone(), walk(5.0, 3.0, 0.0, 1.0));
    assert_ne!(a, values(&model, &near, |st| st.agent_agent)[..20 * d]);
}

#[test]
fn encoder_shapes() {
    let cfg = small_config(NormKind::LayerNorm);
    let model = Model::new(cfg.clone(), 2).unwrap();
    for s in scenarios(10, 3) {
        let mut tape = Tape::inference();
        let params = model.params.bind(&mut tape, false);
        let mut cx = Ctx::new(&mut tape, &params);
        let (enc, stages) = model.encode_stages(&mut cx, &s).unwrap();
        let n = s.num_agents();
        let out = model.decode(&mut cx, &enc).unwrap();
        assert_eq!(tape.shape(enc.embeddings), &[n, cfg.width]);
        assert_eq!(tape.shape(stages.temporal), &[n, 20, cfg.width]);
        assert_eq!(tape.shape(stages.agent_lane), &[n, cfg.width]);
        assert_eq!(enc.origins.len(), n);
        assert_eq!(tape.shape(out.locations), &[n, 3, 30, 2]);
        assert_eq!(tape.shape(out.scales), &[n, 3, 30, 2]);
        assert_eq!(tape.shape(out.mode_probs), &[n, 3]);
    }
}

#[test]
fn prediction_set_contract() {
    for kind in [NormKind::DyT, NormKind::LayerNorm] {
        let model = perturbed(Model::new(small_config(kind), 9).unwrap(), 10);
        for s in scenarios(8, 4) {
            for p in model.predict(&s).unwrap() {
                assert_eq!((p.modes, p.pred_len), (3, 30));
                assert!((p.mode_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(p.scales.iter().all(|&b| b > 0.0));
                assert_eq!(p.trajectory(2).len(), 30);
            }
        }
    }
}

#[test]
fn zero_location_head_predicts_the_origin() {
    let mut model = perturbed(Model::new(small_config(NormKind::DyT), 1).unwrap(), 1);
    let fc2 = model.layout.location_head.fc2;
    model.params.data_mut(fc2.weight).fill(0.0);
    model.params.data_mut(fc2.bias).fill(0.0);
    let s = &scenarios(3, 1)[0];
    for (a, p) in model.predict(s).unwrap().iter().enumerate() {
        let origin = s.last_observed(a).unwrap();
        for k in 0..3 {
            assert!(p.trajectory(k).iter().all(|&q| q == origin));
        }
    }
}

#[test]
fn translation_equivariance() {
    for kind in [NormKind::DyT, NormKind::LayerNorm] {
        let model = perturbed(Model::new(small_config(kind), 11).unwrap(), 12);
        for s in scenarios(6, 5) {
            let offset = [-250.0, 75.0];
            let base = model.predict(&s).unwrap();
            let moved = model.predict(&s.translated(offset)).unwrap();
            for (p, q) in base.iter().zip(&moved) {
                assert_eq!(p.scales, q.scales);
                assert_eq!(p.mode_probs, q.mode_probs);
                for (i, (a, b)) in p.locations.iter().zip(&q.locations).enumerate() {
                    assert!((a + offset[i % 2] - b).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn permutation_equivariance() {
    let model = perturbed(Model::new(small_config(NormKind::DyT), 13).unwrap(), 14);
    let mut rng = Rng::seed(1);
    for s in scenarios(8, 6) {
        let n = s.num_agents();
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let base = model.predict(&s).unwrap();
        let perm = model.predict(&s.permuted(&order)).unwrap();
        for (new, &old) in order.iter().enumerate() {
            let (p, q) = (&base[old], &perm[new]);
            let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-10);
            assert!(close(&p.locations, &q.locations));
            assert!(close(&p.scales, &q.scales));
            assert!(close(&p.mode_probs, &q.mode_probs));
        }
    }
}

#[test]
fn far_coordinates_stay_finite() {
    for kind in [NormKind::DyT, NormKind::LayerNorm] {
        let model = Model::new(small_config(kind), 15).unwrap();
        for (i, s) in scenarios(4, 9).into_iter().enumerate() {
            let shift = if i % 2 == 0 { [1e4, -1e4] } else { [-1e4, 1e4] };
            let far = s.translated([shift[0] - s.history(0)[19][0], shift[1] - s.history(0)[19][1]]);
            let mut tape = Tape::inference();
            let params = model.params.bind(&mut tape, false);
            let mut cx = Ctx::new(&mut tape, &params);
            let (_, st) = model.encode_stages(&mut cx, &far).unwrap();
            for v in [
                st.agent_tokens,
                st.lane_tokens,
                st.agent_agent,
                st.temporal,
                st.agent_lane,
                st.global,
            ] {
                assert!(tape.value(v).iter().all(|x| x.is_finite()));
            }
            for p in model.predict(&far).unwrap() {
                assert!(p.locations.iter().chain(&p.scales).chain(&p.mode_probs).all(|x| x.is_finite()));
            }
        }
    }
}

#[test]
fn rejects_wrong_horizons_and_bad_configs() {
    let model = Model::new(small_config(NormKind::DyT), 1).unwrap();
    assert!(model.predict(&tiny_scenario()).is_err());
    for cfg in [
        ModelConfig {
            modes: 0,
            ..ModelConfig::default()
        },
        ModelConfig {
            radius: 0.0,
            ..ModelConfig::default()
        },
        ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        },
        ModelConfig {
            blocks_per_stage: 0,
            ..ModelConfig::default()
        },
    ] {
        assert!(Model::new(cfg, 0).is_err());
    }
}

#[test]
fn deeper_stages_register_more_blocks() {
    let one = Model::new(small_config(NormKind::DyT), 1).unwrap();
    let two = Model::new(
        ModelConfig {
            blocks_per_stage: 2,
            ..small_config(NormKind::DyT)
        },
        1,
    )
    .unwrap();
    assert_eq!(two.layout.global.len(), 2);
    assert!(two.params.num_scalars() > one.params.num_scalars());
    let s = &scenarios(1, 2)[0];
    assert_eq!(two.predict(s).unwrap().len(), s.num_agents());
}

#[test]
fn tiny_backbone_gradients() {
    for kind in [NormKind::DyT, NormKind::LayerNorm] {
        let model = perturbed(Model::new(tiny_config(kind), 21).unwrap(), 22);
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
                let w = cx
                    .tape
                    .constant(Tensor::new([2, 2, 3, 2], (0..24).map(|i| (i as f64 * 0.37).sin()).collect())?);
                let loc = cx.tape.mul(out.locations, w)?;
                let loc = cx.tape.sum_all(loc);
                let sc = cx.tape.log(out.scales)?;
                let sc = cx.tape.sum_all(sc);
                let pr = cx.tape.index_select(out.mode_probs, 1, &[1])?;
                let pr = cx.tape.sum_all(pr);
                let total = cx.tape.add(loc, sc)?;
                cx.tape.add(total, pr)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{kind:?}: {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_scenarios_encode_to_n_by_d(seed in any::<u64>()) {
        let model = Model::new(small_config(NormKind::DyT), 3).unwrap();
        let s = &scenarios(1, seed)[0];
        let preds = model.predict(s).unwrap();
        prop_assert_eq!(preds.len(), s.num_agents());
        for p in &preds {
            prop_assert!(p.locations.iter().all(|v| v.is_finite()));
        }
    }
}
