#![allow(dead_code)]

use dyttp::backbone::ModelConfig;
use dyttp::data::{Lane, Scenario, ScenarioKind};
use dyttp::layers::NormKind;

/// D=8, H=2, K=2, T=4, F=3.
pub fn tiny_config(norm_kind: NormKind) -> ModelConfig {
    ModelConfig {
        width: 8,
        heads: 2,
        blocks_per_stage: 1,
        modes: 2,
        obs_len: 4,
        pred_len: 3,
        radius: 50.0,
        norm_kind,
        ffn_ratio: 2,
        dropout: 0.0,
    }
}

/// Two agents, one lane of two segments, on the tiny horizons.
pub fn tiny_scenario() -> Scenario {
    let line = |x0: f64, y0: f64, vx: f64, vy: f64, range: std::ops::Range<usize>| -> Vec<[f64; 2]> {
        range
            .map(|k| [x0 + vx * k as f64, y0 + vy * k as f64 + 0.05 * (k * k) as f64])
            .collect()
    };
    let mut histories = line(1.0, 2.0, 0.8, 0.1, 0..4);
    histories.extend(line(-3.0, 5.0, 0.2, -0.6, 0..4));
    let mut futures = line(1.0, 2.0, 0.8, 0.1, 4..7);
    futures.extend(line(-3.0, 5.0, 0.2, -0.6, 4..7));
    Scenario {
        id: "tiny".into(),
        obs_len: 4,
        pred_len: 3,
        histories,
        history_valid: vec![true; 8],
        futures,
        future_valid: vec![true; 6],
        lanes: vec![Lane {
            id: "l".into(),
            points: vec![[0.0, 1.5], [4.0, 2.5], [8.0, 4.5]],
        }],
        focal: 0,
        kind: ScenarioKind::Unknown,
    }
}
