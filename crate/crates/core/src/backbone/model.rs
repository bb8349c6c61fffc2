use super::{ModelConfig, PredictionSet};
use crate::data::{Point, Scenario};
use crate::layers::{Block, Ctx, Init, Linear, Mlp, ParamId, ParamStore};
use crate::tensor::{Result, Rng, Tape, Tensor, TensorError, Var};

/// Multiplier applied to metric position features before embedding.
pub const POSITION_SCALE: f64 = 0.1;

/// Parameter handles of every sub-module. Shared by all parameter sets of
/// one architecture.
#[derive(Debug, Clone)]
pub struct ModelLayout {
    pub agent_embed: Mlp,
    pub agent_position: ParamId,
    pub lane_embed: Mlp,
    pub rel_agent_agent: Linear,
    pub rel_agent_lane: Linear,
    pub rel_global: Linear,
    pub agent_agent: Vec<Block>,
    pub temporal: Vec<Block>,
    pub agent_lane: Vec<Block>,
    pub global: Vec<Block>,
    pub location_head: Mlp,
    pub scale_head: Mlp,
    pub mode_head: Linear,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub layout: ModelLayout,
    pub params: ParamStore,
}

/// Per-agent context vectors `[N, D]` and each agent's frame origin.
#[derive(Debug, Clone)]
pub struct EncodedScene {
    pub embeddings: Var,
    pub origins: Vec<Point>,
}

/// Intermediate activations, for inspection.
#[derive(Debug, Clone, Copy)]
pub struct StageOutputs {
    /// `[N, T, D]`
    pub agent_tokens: Var,
    /// `[M, D]`
    pub lane_tokens: Var,
    /// `[N, T, D]`
    pub agent_agent: Var,
    /// `[N, T, D]`
    pub temporal: Var,
    /// `[N, D]`
    pub agent_lane: Var,
    /// `[N, D]`
    pub global: Var,
}

/// Decoder outputs on the tape: locations and scales `[N, K, F, 2]`, mode
/// probabilities `[N, K]`.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub locations: Var,
    pub scales: Var,
    pub mode_probs: Var,
    pub origins: Vec<Point>,
}

impl ModelOutput {
    pub fn predictions(&self, tape: &Tape, modes: usize, pred_len: usize) -> Vec<PredictionSet> {
        let per = modes * pred_len * 2;
        let (loc, sc, pr) = (tape.value(self.locations), tape.value(self.scales), tape.value(self.mode_probs));
        (0..self.origins.len())
            .map(|a| PredictionSet {
                modes,
                pred_len,
                locations: loc[a * per..(a + 1) * per].to_vec(),
                scales: sc[a * per..(a + 1) * per].to_vec(),
                mode_probs: pr[a * modes..(a + 1) * modes].to_vec(),
            })
            .collect()
    }
}

/// Positions, validity and nearby lane segments of one scenario.
struct Geometry {
    agents: usize,
    steps: usize,
    positions: Vec<Point>,
    valid: Vec<bool>,
    origins: Vec<Point>,
    has_history: Vec<bool>,
    segment_mid: Vec<Point>,
    segment_dir: Vec<Point>,
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Geometry {
    fn new(s: &Scenario, radius: f64) -> Self {
        let (agents, steps) = (s.num_agents(), s.obs_len);
        let origins: Vec<Point> = (0..agents).map(|a| s.last_observed(a).unwrap_or([0.0, 0.0])).collect();
        let has_history: Vec<bool> = (0..agents).map(|a| s.valid_history_steps(a) > 0).collect();
        let mut segment_mid = Vec::new();
        let mut segment_dir = Vec::new();
        for lane in &s.lanes {
            for w in lane.points.windows(2) {
                let mid = [0.5 * (w[0][0] + w[1][0]), 0.5 * (w[0][1] + w[1][1])];
                let near = (0..agents).any(|a| has_history[a] && dist(mid, origins[a]) <= radius);
                if near {
                    segment_mid.push(mid);
                    segment_dir.push([w[1][0] - w[0][0], w[1][1] - w[0][1]]);
                }
            }
        }
        Self {
            agents,
            steps,
            positions: s.histories.clone(),
            valid: s.history_valid.clone(),
            origins,
            has_history,
            segment_mid,
            segment_dir,
        }
    }

    fn at(&self, agent: usize, step: usize) -> Option<Point> {
        let i = agent * self.steps + step;
        self.valid[i].then_some(self.positions[i])
    }

    fn displacements(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.agents * self.steps * 2);
        for a in 0..self.agents {
            for t in 0..self.steps {
                let d = match (t.checked_sub(1).and_then(|p| self.at(a, p)), self.at(a, t)) {
                    (Some(p), Some(q)) => [q[0] - p[0], q[1] - p[1]],
                    _ => [0.0, 0.0],
                };
                out.extend_from_slice(&d);
            }
        }
        out
    }
}

fn rel(from: Point, to: Point) -> [f64; 2] {
    [(to[0] - from[0]) * POSITION_SCALE, (to[1] - from[1]) * POSITION_SCALE]
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let rng = Rng::seed(seed);
        let mut store = ParamStore::new();
        let (d, t) = (cfg.width, cfg.obs_len);
        let out = cfg.modes * cfg.pred_len * 2;
        let block = cfg.block();
        let stage = |store: &mut ParamStore, name: &str, cross: bool| -> Result<Vec<Block>> {
            (0..cfg.blocks_per_stage)
                .map(|i| Block::new(store, &format!("{name}.{i}"), block, cross, &rng))
                .collect()
        };
        let layout = ModelLayout {
            agent_embed: Mlp::new(&mut store, "embed.agent", [2, d, d], &rng),
            agent_position: store.add("embed.agent.position", &[t, d], Init::XavierUniform { fan_in: t, fan_out: d }, &rng),
            lane_embed: Mlp::new(&mut store, "embed.lane", [2, d, d], &rng),
            rel_agent_agent: Linear::new(&mut store, "rel.agent_agent", 2, d, &rng),
            rel_agent_lane: Linear::new(&mut store, "rel.agent_lane", 2, d, &rng),
            rel_global: Linear::new(&mut store, "rel.global", 2, d, &rng),
            agent_agent: stage(&mut store, "stage.agent_agent", true)?,
            temporal: stage(&mut store, "stage.temporal", false)?,
            agent_lane: stage(&mut store, "stage.agent_lane", true)?,
            global: stage(&mut store, "stage.global", true)?,
            location_head: Mlp::new(&mut store, "head.location", [d, 2 * d, out], &rng),
            scale_head: Mlp::new(&mut store, "head.scale", [d, 2 * d, out], &rng),
            mode_head: Linear::new(&mut store, "head.mode", d, cfg.modes, &rng),
        };
        Ok(Self {
            cfg,
            layout,
            params: store,
        })
    }

    /// Same architecture with a different parameter set.
    pub fn with_params(&self, params: ParamStore) -> Result<Self> {
        if !self.params.same_layout(&params) {
            return Err(TensorError::Invalid("parameter set does not match the architecture".into()));
        }
        Ok(Self {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            params,
        })
    }

    fn check(&self, s: &Scenario) -> Result<()> {
        s.validate().map_err(|e| TensorError::Invalid(e.to_string()))?;
        if (s.obs_len, s.pred_len) != (self.cfg.obs_len, self.cfg.pred_len) {
            return Err(TensorError::Invalid(format!(
                "scenario {} has horizons {}/{}, model expects {}/{}",
                s.id, s.obs_len, s.pred_len, self.cfg.obs_len, self.cfg.pred_len
            )));
        }
        Ok(())
    }

    fn constant(tape: &mut Tape, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Var> {
        Ok(tape.constant(Tensor::new(shape, data)?))
    }

    /// Agent tokens `[N, T, D]` from per-step displacements plus a learned
    /// per-step embedding, and lane tokens `[M, D]` from the direction of
    /// each lane segment near an observed agent.
    pub fn embed_inputs(&self, cx: &mut Ctx<'_>, s: &Scenario) -> Result<(Var, Var)> {
        self.check(s)?;
        let g = Geometry::new(s, self.cfg.radius);
        self.embed(cx, &g)
    }

    fn embed(&self, cx: &mut Ctx<'_>, g: &Geometry) -> Result<(Var, Var)> {
        let l = &self.layout;
        let disp = Self::constant(cx.tape, [g.agents, g.steps, 2], g.displacements())?;
        let agents = l.agent_embed.forward(cx, disp)?;
        let agents = cx.tape.add(agents, cx.p(l.agent_position))?;
        let dirs: Vec<f64> = g
            .segment_dir
            .iter()
            .flat_map(|d| [d[0] * POSITION_SCALE, d[1] * POSITION_SCALE])
            .collect();
        let dirs = Self::constant(cx.tape, [g.segment_dir.len(), 2], dirs)?;
        let lanes = l.lane_embed.forward(cx, dirs)?;
        Ok((agents, lanes))
    }

    pub fn encode(&self, cx: &mut Ctx<'_>, s: &Scenario) -> Result<EncodedScene> {
        Ok(self.encode_stages(cx, s)?.0)
    }

    pub fn encode_stages(&self, cx: &mut Ctx<'_>, s: &Scenario) -> Result<(EncodedScene, StageOutputs)> {
        self.check(s)?;
        let g = Geometry::new(s, self.cfg.radius);
        let l = &self.layout;
        let (n, t, d, r) = (g.agents, g.steps, self.cfg.width, self.cfg.radius);
        let (agent_tokens, lane_tokens) = self.embed(cx, &g)?;

        // Agent-agent, per observed step, within the radius.
        let mut feats = vec![0.0; t * n * n * 2];
        let mut mask = vec![false; t * n * n];
        for step in 0..t {
            for i in 0..n {
                for j in 0..n {
                    let e = (step * n + i) * n + j;
                    if let (Some(pi), Some(pj)) = (g.at(i, step), g.at(j, step)) {
                        feats[e * 2..e * 2 + 2].copy_from_slice(&rel(pi, pj));
                        mask[e] = i == j || dist(pi, pj) <= r;
                    }
                    mask[e] |= i == j;
                }
            }
        }
        let feats = Self::constant(cx.tape, [t, n, n, 2], feats)?;
        let rel_emb = l.rel_agent_agent.forward(cx, feats)?;
        let mut x = cx.tape.permute(agent_tokens, &[1, 0, 2])?;
        for block in &l.agent_agent {
            let keys = cx.tape.reshape(x, [t, 1, n, d])?;
            let context = cx.tape.add(keys, rel_emb)?;
            let context = cx.tape.reshape(context, [t * n, n, d])?;
            let query = cx.tape.reshape(x, [t * n, 1, d])?;
            let y = block.forward_cross(cx, query, context, Some(&mask))?;
            x = cx.tape.reshape(y, [t, n, d])?;
        }
        let after_aa = cx.tape.permute(x, &[1, 0, 2])?;

        // Temporal, causal over each agent's observed steps.
        let mut mask = vec![false; n * t * t];
        for a in 0..n {
            for q in 0..t {
                for k in 0..=q {
                    mask[(a * t + q) * t + k] = k == q || g.valid[a * t + k];
                }
            }
        }
        let mut x = after_aa;
        for block in &l.temporal {
            x = block.forward(cx, x, Some(&mask))?;
        }
        let after_temporal = x;
        let mut summary = cx.tape.index_select(x, 1, &[t - 1])?;

        // Agent-lane: each agent attends to itself and lane segments in range.
        let m = g.segment_mid.len();
        let mut feats = vec![0.0; n * m * 2];
        let mut mask = vec![false; n * (m + 1)];
        for a in 0..n {
            mask[a * (m + 1)] = true;
            for (k, &mid) in g.segment_mid.iter().enumerate() {
                let e = a * m + k;
                feats[e * 2..e * 2 + 2].copy_from_slice(&rel(g.origins[a], mid));
                mask[a * (m + 1) + 1 + k] = g.has_history[a] && dist(mid, g.origins[a]) <= r;
            }
        }
        let lane_part = if m > 0 {
            let feats = Self::constant(cx.tape, [n, m, 2], feats)?;
            let rel_emb = l.rel_agent_lane.forward(cx, feats)?;
            let lanes = cx.tape.reshape(lane_tokens, [1, m, d])?;
            Some(cx.tape.add(lanes, rel_emb)?)
        } else {
            None
        };
        for block in &l.agent_lane {
            let context = match lane_part {
                Some(lanes) => cx.tape.concat(&[summary, lanes], 1)?,
                None => summary,
            };
            summary = block.forward_cross(cx, summary, context, Some(&mask))?;
        }
        let after_al = cx.tape.reshape(summary, [n, d])?;

        // Global: every agent with any observed step.
        let mut feats = vec![0.0; n * n * 2];
        let mut mask = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                let e = i * n + j;
                feats[e * 2..e * 2 + 2].copy_from_slice(&rel(g.origins[i], g.origins[j]));
                mask[e] = i == j || (g.has_history[i] && g.has_history[j]);
            }
        }
        let feats = Self::constant(cx.tape, [n, n, 2], feats)?;
        let rel_emb = l.rel_global.forward(cx, feats)?;
        for block in &l.global {
            let keys = cx.tape.reshape(summary, [1, n, d])?;
            let context = cx.tape.add(keys, rel_emb)?;
            summary = block.forward_cross(cx, summary, context, Some(&mask))?;
        }
        let embeddings = cx.tape.reshape(summary, [n, d])?;
        let stages = StageOutputs {
            agent_tokens,
            lane_tokens,
            agent_agent: after_aa,
            temporal: after_temporal,
            agent_lane: after_al,
            global: embeddings,
        };
        Ok((
            EncodedScene {
                embeddings,
                origins: g.origins,
            },
            stages,
        ))
    }

    /// Per-agent heads. Locations are cumulative per-step offsets added to
    /// the agent's origin; scales pass through softplus.
    pub fn decode(&self, cx: &mut Ctx<'_>, enc: &EncodedScene) -> Result<ModelOutput> {
        let l = &self.layout;
        let (n, k, f) = (enc.origins.len(), self.cfg.modes, self.cfg.pred_len);
        let steps = l.location_head.forward(cx, enc.embeddings)?;
        let steps = cx.tape.reshape(steps, [n, k, f, 2])?;
        let steps = cx.tape.permute(steps, &[0, 1, 3, 2])?;
        let mut cumulative = vec![0.0; f * f];
        for g in 0..f {
            for h in g..f {
                cumulative[g * f + h] = 1.0;
            }
        }
        let cumulative = Self::constant(cx.tape, [f, f], cumulative)?;
        let offsets = cx.tape.matmul(steps, cumulative)?;
        let offsets = cx.tape.permute(offsets, &[0, 1, 3, 2])?;
        let origins = Self::constant(cx.tape, [n, 1, 1, 2], enc.origins.iter().flatten().copied().collect())?;
        let locations = cx.tape.add(offsets, origins)?;

        let scales = l.scale_head.forward(cx, enc.embeddings)?;
        let scales = cx.tape.softplus(scales);
        let scales = cx.tape.reshape(scales, [n, k, f, 2])?;

        let logits = l.mode_head.forward(cx, enc.embeddings)?;
        let mode_probs = cx.tape.softmax(logits, 1)?;
        Ok(ModelOutput {
            locations,
            scales,
            mode_probs,
            origins: enc.origins.clone(),
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, s: &Scenario) -> Result<ModelOutput> {
        let enc = self.encode(cx, s)?;
        self.decode(cx, &enc)
    }

    /// Inference on a fresh non-recording tape; one set per agent.
    pub fn predict(&self, s: &Scenario) -> Result<Vec<PredictionSet>> {
        let mut tape = Tape::inference();
        let params = self.params.bind(&mut tape, false);
        let mut cx = Ctx::new(&mut tape, &params);
        let out = self.forward(&mut cx, s)?;
        Ok(out.predictions(&tape, self.cfg.modes, self.cfg.pred_len))
    }
}
