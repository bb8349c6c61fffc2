use serde::{Deserialize, Serialize};

use super::{Ctx, Linear, MultiHeadAttention, Norm, NormKind, ParamStore};
use crate::tensor::{Result, Rng, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub norm_kind: NormKind,
    pub width: usize,
    pub heads: usize,
    pub ffn_ratio: usize,
    pub dropout: f64,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(TensorError::Invalid(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TensorError::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.ffn_ratio == 0 {
            return Err(TensorError::Invalid("ffn_ratio must be at least 1".into()));
        }
        Ok(())
    }
}

/// Pre-norm transformer block:
/// `x + Attn(Norm(x), Norm(ctx))`, then `x + FFN(Norm(x))`.
///
/// Self-attention blocks reuse the query norm for keys/values; cross-attention
/// blocks carry a separate context norm.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub cfg: BlockConfig,
    pub norm_query: Norm,
    pub norm_context: Option<Norm>,
    pub attn: MultiHeadAttention,
    pub norm_ffn: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl Block {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: BlockConfig, cross: bool, seed: &Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.width;
        Ok(Self {
            cfg,
            norm_query: Norm::new(store, &format!("{prefix}.norm_q"), cfg.norm_kind, d, seed),
            norm_context: cross.then(|| Norm::new(store, &format!("{prefix}.norm_ctx"), cfg.norm_kind, d, seed)),
            attn: MultiHeadAttention::new(store, &format!("{prefix}.attn"), d, cfg.heads, seed)?,
            norm_ffn: Norm::new(store, &format!("{prefix}.norm_ffn"), cfg.norm_kind, d, seed),
            ffn_in: Linear::new(store, &format!("{prefix}.ffn.fc1"), d, d * cfg.ffn_ratio, seed),
            ffn_out: Linear::new(store, &format!("{prefix}.ffn.fc2"), d * cfg.ffn_ratio, d, seed),
        })
    }

    /// Self-attention over `x: [B, T, D]`.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let normed = self.norm_query.forward(cx, x)?;
        let attended = self.attn.forward(cx, normed, normed, mask, self.cfg.dropout)?;
        let x = cx.tape.add(x, attended)?;
        self.feed_forward(cx, x)
    }

    /// Cross-attention from `x: [B, Tq, D]` onto `context: [B, Tk, D]`.
    pub fn forward_cross(&self, cx: &mut Ctx<'_>, x: Var, context: Var, mask: Option<&[bool]>) -> Result<Var> {
        let norm_ctx = self
            .norm_context
            .ok_or_else(|| TensorError::Invalid("block was built without a context norm".into()))?;
        let q = self.norm_query.forward(cx, x)?;
        let kv = norm_ctx.forward(cx, context)?;
        let attended = self.attn.forward(cx, q, kv, mask, self.cfg.dropout)?;
        let x = cx.tape.add(x, attended)?;
        self.feed_forward(cx, x)
    }

    fn feed_forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.norm_ffn.forward(cx, x)?;
        let h = self.ffn_in.forward(cx, h)?;
        let h = cx.tape.silu(h);
        let h = cx.dropout(h, self.cfg.dropout)?;
        let h = self.ffn_out.forward(cx, h)?;
        cx.tape.add(x, h)
    }
}
