use serde::{Deserialize, Serialize};

use super::{Ctx, Init, ParamId, ParamStore};
use crate::tensor::{Result, Rng, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const DYT_ALPHA_INIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[serde(rename = "dyt")]
    DyT,
    #[serde(rename = "layernorm")]
    LayerNorm,
}

impl NormKind {
    pub fn label(self) -> &'static str {
        match self {
            NormKind::DyT => "dyt",
            NormKind::LayerNorm => "layernorm",
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "dyt" => Ok(NormKind::DyT),
            "layernorm" | "ln" => Ok(NormKind::LayerNorm),
            other => Err(format!("unknown norm kind `{other}` (expected dyt or layernorm)")),
        }
    }
}

/// One scalar `alpha` shared across channels; `gamma`, `beta` per channel.
#[derive(Debug, Clone, Copy)]
pub struct DyTParams {
    pub alpha: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

/// A normalization site: DyT or LayerNorm behind the same call.
#[derive(Debug, Clone, Copy)]
pub enum Norm {
    DyT(DyTParams),
    LayerNorm(LayerNormParams),
}

impl Norm {
    pub fn new(store: &mut ParamStore, prefix: &str, kind: NormKind, channels: usize, seed: &Rng) -> Self {
        let gamma = store.add(&format!("{prefix}.gamma"), &[channels], Init::Const(1.0), seed);
        let beta = store.add(&format!("{prefix}.beta"), &[channels], Init::Zeros, seed);
        match kind {
            NormKind::DyT => {
                let alpha = store.add(&format!("{prefix}.alpha"), &[1], Init::Const(DYT_ALPHA_INIT), seed);
                Norm::DyT(DyTParams { alpha, gamma, beta })
            }
            NormKind::LayerNorm => Norm::LayerNorm(LayerNormParams {
                gamma,
                beta,
                eps: LAYER_NORM_EPS,
            }),
        }
    }

    pub fn kind(&self) -> NormKind {
        match self {
            Norm::DyT(_) => NormKind::DyT,
            Norm::LayerNorm(_) => NormKind::LayerNorm,
        }
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        match self {
            Norm::DyT(p) => dyt_forward(cx, x, p),
            Norm::LayerNorm(p) => layernorm_forward(cx, x, p),
        }
    }
}

/// `gamma · tanh(alpha · x) + beta` over the last axis.
pub fn dyt_forward(cx: &mut Ctx<'_>, x: Var, p: &DyTParams) -> Result<Var> {
    let (a, g, b) = (cx.p(p.alpha), cx.p(p.gamma), cx.p(p.beta));
    cx.tape.dyt(x, a, g, b)
}

pub fn layernorm_forward(cx: &mut Ctx<'_>, x: Var, p: &LayerNormParams) -> Result<Var> {
    let (g, b) = (cx.p(p.gamma), cx.p(p.beta));
    cx.tape.layer_norm(x, g, b, p.eps)
}
