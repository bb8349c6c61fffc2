use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scenario::{DatasetSplit, Lane, Point, Scenario, ScenarioKind, STEP_SECONDS};
use crate::tensor::Rng;

const LANE_SPACING: f64 = 5.0;
const LANE_MARGIN: f64 = 20.0;
const LANE_WIDTH: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverMix {
    pub straight: f64,
    pub left_turn: f64,
    pub right_turn: f64,
    pub lane_change: f64,
}

impl Default for ManeuverMix {
    fn default() -> Self {
        Self {
            straight: 0.40,
            left_turn: 0.25,
            right_turn: 0.25,
            lane_change: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub obs_len: usize,
    pub pred_len: usize,
    /// Standard deviation of the positional noise, meters.
    pub noise_std: f64,
    pub min_agents: usize,
    pub max_agents: usize,
    pub min_speed: f64,
    pub max_speed: f64,
    pub min_turn_radius: f64,
    pub max_turn_radius: f64,
    pub mix: ManeuverMix,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            obs_len: super::DEFAULT_OBS_LEN,
            pred_len: super::DEFAULT_PRED_LEN,
            noise_std: 0.1,
            min_agents: 1,
            max_agents: 6,
            min_speed: 2.0,
            max_speed: 15.0,
            min_turn_radius: 12.0,
            max_turn_radius: 35.0,
            mix: ManeuverMix::default(),
        }
    }
}

/// Path shape in a local frame where travel starts at the origin heading +x.
/// `start` is the along-path distance at which the maneuver begins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Maneuver {
    Straight,
    /// Circular arc of signed `angle` (positive turns left), then straight.
    Turn {
        radius: f64,
        start: f64,
        angle: f64,
    },
    /// Smoothstep lateral shift of `offset` meters over `length` meters.
    LaneChange {
        start: f64,
        length: f64,
        offset: f64,
    },
}

impl Maneuver {
    pub fn kind(&self) -> ScenarioKind {
        match *self {
            Maneuver::Straight => ScenarioKind::Straight,
            Maneuver::Turn { angle, .. } if angle > 0.0 => ScenarioKind::LeftTurn,
            Maneuver::Turn { .. } => ScenarioKind::RightTurn,
            Maneuver::LaneChange { .. } => ScenarioKind::LaneChange,
        }
    }

    /// Local position after `s` meters of travel.
    pub fn local(&self, s: f64) -> Point {
        match *self {
            Maneuver::Straight => [s, 0.0],
            Maneuver::Turn { radius, start, angle } => {
                if s <= start {
                    return [s, 0.0];
                }
                let sign = angle.signum();
                let arc_len = radius * angle.abs();
                let u = (s - start).min(arc_len);
                let theta = u / radius;
                let mut p = [start + radius * theta.sin(), sign * radius * (1.0 - theta.cos())];
                let rest = s - start - arc_len;
                if rest > 0.0 {
                    p[0] += rest * angle.cos();
                    p[1] += rest * angle.sin();
                }
                p
            }
            Maneuver::LaneChange { start, length, offset } => {
                let t = ((s - start) / length).clamp(0.0, 1.0);
                [s, offset * t * t * (3.0 - 2.0 * t)]
            }
        }
    }
}

/// One agent's generating path placed in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentPath {
    pub origin: Point,
    pub heading: f64,
    /// Meters per second along the path.
    pub speed: f64,
    pub maneuver: Maneuver,
    /// First observed history step; earlier steps are masked.
    pub first_valid: usize,
}

impl AgentPath {
    pub fn to_world(&self, local: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        [
            self.origin[0] + c * local[0] - s * local[1],
            self.origin[1] + s * local[0] + c * local[1],
        ]
    }

    /// Noise-free world position at time step `step`.
    pub fn position(&self, step: usize) -> Point {
        let s = self.speed * STEP_SECONDS * step as f64;
        self.to_world(self.maneuver.local(s))
    }

    /// Lane centerlines that generated this path, sampled every few meters.
    pub fn lanes(&self, steps: usize, prefix: &str) -> Vec<Lane> {
        let end = self.speed * steps.saturating_sub(1) as f64 * STEP_SECONDS + LANE_MARGIN;
        let sample = |m: Maneuver| {
            let mut points = Vec::new();
            let mut s = -LANE_MARGIN;
            while s < end {
                points.push(quantize(self.to_world(m.local(s))));
                s += LANE_SPACING;
            }
            points.push(quantize(self.to_world(m.local(end))));
            points
        };
        match self.maneuver {
            Maneuver::LaneChange { offset, .. } => vec![
                Lane {
                    id: format!("{prefix}-0"),
                    points: sample(Maneuver::Straight),
                },
                Lane {
                    id: format!("{prefix}-1"),
                    points: sample(Maneuver::LaneChange {
                        start: f64::NEG_INFINITY,
                        length: 1.0,
                        offset,
                    }),
                },
            ],
            m => vec![Lane {
                id: format!("{prefix}-0"),
                points: sample(m),
            }],
        }
    }
}

fn quantize(p: Point) -> Point {
    [p[0] as f32 as f64, p[1] as f32 as f64]
}

fn pick_maneuver(rng: &mut Rng, cfg: &GenConfig, speed: f64) -> Maneuver {
    let mix = cfg.mix;
    let total = mix.straight + mix.left_turn + mix.right_turn + mix.lane_change;
    let u = rng.uniform() * total;
    // Maneuvers begin within 1.5 s of the last observed step.
    let last_obs = (cfg.obs_len - 1) as f64 * STEP_SECONDS;
    let start = speed * (last_obs + rng.uniform_in(-1.5, 1.5)).max(0.0);
    if u < mix.straight {
        Maneuver::Straight
    } else if u < mix.straight + mix.left_turn + mix.right_turn {
        let sign = if u < mix.straight + mix.left_turn { 1.0 } else { -1.0 };
        Maneuver::Turn {
            radius: rng.uniform_in(cfg.min_turn_radius, cfg.max_turn_radius),
            start,
            angle: sign * FRAC_PI_2,
        }
    } else {
        let sign = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
        Maneuver::LaneChange {
            start,
            length: rng.uniform_in(25.0, 45.0),
            offset: sign * LANE_WIDTH,
        }
    }
}

/// Random agent layout; the focal agent comes first.
fn sample_paths(rng: &mut Rng, cfg: &GenConfig) -> Vec<AgentPath> {
    let span = cfg.max_agents.max(cfg.min_agents) - cfg.min_agents + 1;
    let n = cfg.min_agents.max(1) + rng.below(span);
    let origin = [rng.uniform_in(-500.0, 500.0), rng.uniform_in(-500.0, 500.0)];
    let heading = rng.uniform_in(0.0, 2.0 * PI);
    let mut paths = Vec::with_capacity(n);
    for a in 0..n {
        let speed = rng.uniform_in(cfg.min_speed, cfg.max_speed);
        let maneuver = pick_maneuver(rng, cfg, speed);
        let (origin, heading, first_valid) = if a == 0 {
            (origin, heading, 0)
        } else {
            let o = [origin[0] + rng.uniform_in(-30.0, 30.0), origin[1] + rng.uniform_in(-30.0, 30.0)];
            let h = heading + FRAC_PI_2 * rng.below(4) as f64 + rng.uniform_in(-0.1, 0.1);
            let late = if rng.uniform() < 0.2 { rng.below(cfg.obs_len) } else { 0 };
            (o, h, late)
        };
        paths.push(AgentPath {
            origin,
            heading,
            speed,
            maneuver,
            first_valid,
        });
    }
    paths
}

/// Scenario `index` of the dataset seeded by `seed`, plus its generating paths.
pub fn generate_scenario(seed: u64, index: usize, cfg: &GenConfig) -> (Scenario, Vec<AgentPath>) {
    let mut rng = Rng::seed(seed).fork(index as u64);
    let paths = sample_paths(&mut rng, cfg);
    let scenario = render_scenario(format!("syn-{seed}-{index:06}"), &paths, cfg, &mut rng);
    (scenario, paths)
}

/// Sample `paths` on the step grid, add noise and emit their lanes. The
/// first path is the focal agent.
pub fn render_scenario(id: String, paths: &[AgentPath], cfg: &GenConfig, rng: &mut Rng) -> Scenario {
    let (t_len, f_len) = (cfg.obs_len, cfg.pred_len);
    let n = paths.len();
    let mut histories = Vec::with_capacity(n * t_len);
    let mut history_valid = Vec::with_capacity(n * t_len);
    let mut futures = Vec::with_capacity(n * f_len);
    let noisy = |rng: &mut Rng, p: Point| {
        if cfg.noise_std > 0.0 {
            quantize([p[0] + cfg.noise_std * rng.normal(), p[1] + cfg.noise_std * rng.normal()])
        } else {
            quantize(p)
        }
    };
    for path in paths {
        for t in 0..t_len {
            let valid = t >= path.first_valid;
            let p = noisy(rng, path.position(t));
            histories.push(if valid { p } else { [0.0, 0.0] });
            history_valid.push(valid);
        }
        for f in 0..f_len {
            futures.push(noisy(rng, path.position(t_len + f)));
        }
    }
    let lanes = paths
        .iter()
        .enumerate()
        .flat_map(|(a, p)| p.lanes(t_len + f_len, &format!("lane-{a}")))
        .collect();
    Scenario {
        id,
        obs_len: t_len,
        pred_len: f_len,
        histories,
        history_valid,
        futures,
        future_valid: vec![true; n * f_len],
        lanes,
        focal: 0,
        kind: paths.first().map_or(ScenarioKind::Unknown, |p| p.maneuver.kind()),
    }
}

/// Validation membership of generated scenario `index` under `seed`.
///
/// Indices are grouped in blocks of five and one hashed slot per block goes
/// to validation, so the split is exactly 80/20 whenever the count is a
/// multiple of five.
pub fn is_validation(seed: u64, index: usize) -> bool {
    let mut h = Sha256::new();
    h.update(b"dyttp-split");
    h.update(seed.to_le_bytes());
    h.update((index as u64 / 5).to_le_bytes());
    let digest = h.finalize();
    let slot = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % 5;
    index as u64 % 5 == slot
}

pub fn generate_synthetic(count: usize, seed: u64, cfg: &GenConfig) -> DatasetSplit {
    let mut split = DatasetSplit {
        seed,
        ..DatasetSplit::default()
    };
    for index in 0..count {
        let (scenario, _) = generate_scenario(seed, index, cfg);
        if is_validation(seed, index) {
            split.val.push(scenario);
        } else {
            split.train.push(scenario);
        }
    }
    split
}
