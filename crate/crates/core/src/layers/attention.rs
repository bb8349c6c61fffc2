use super::{Ctx, Linear, ParamStore};
use crate::tensor::{Result, Rng, TensorError, Var};

/// Scaled dot-product attention with `heads` heads over width `width`.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, heads: usize, seed: &Rng) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(TensorError::Invalid(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{prefix}.q"), width, width, seed),
            key: Linear::new(store, &format!("{prefix}.k"), width, width, seed),
            value: Linear::new(store, &format!("{prefix}.v"), width, width, seed),
            output: Linear::new(store, &format!("{prefix}.o"), width, width, seed),
            heads,
            width,
        })
    }

    /// `q_in: [B, Tq, D]`, `kv_in: [B, Tk, D]`, optional `mask` laid out as
    /// `[B, Tq, Tk]` with `true` = attend. Every query row needs at least one
    /// open key.
    pub fn forward(&self, cx: &mut Ctx<'_>, q_in: Var, kv_in: Var, mask: Option<&[bool]>, dropout: f64) -> Result<Var> {
        let qs = cx.tape.shape(q_in).to_vec();
        let ks = cx.tape.shape(kv_in).to_vec();
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != self.width || ks[2] != self.width {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                lhs: qs,
                rhs: ks,
            });
        }
        let (b, tq, tk) = (qs[0], qs[1], ks[1]);
        if let Some(m) = mask {
            if m.len() != b * tq * tk {
                return Err(TensorError::ShapeMismatch {
                    op: "attention mask",
                    lhs: vec![b, tq, tk],
                    rhs: vec![m.len()],
                });
            }
        }
        let (h, dh) = (self.heads, self.width / self.heads);
        let split = |cx: &mut Ctx<'_>, x: Var, t: usize| -> Result<Var> {
            let x = cx.tape.reshape(x, [b, t, h, dh])?;
            cx.tape.permute(x, &[2, 0, 1, 3])
        };
        let q = self.query.forward(cx, q_in)?;
        let q = split(cx, q, tq)?;
        let k = self.key.forward(cx, kv_in)?;
        let k = split(cx, k, tk)?;
        let v = self.value.forward(cx, kv_in)?;
        let v = split(cx, v, tk)?;

        let kt = cx.tape.transpose(k)?;
        let scores = cx.tape.matmul(q, kt)?;
        let scores = cx.tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = match mask {
            Some(m) => cx.tape.masked_softmax(scores, m)?,
            None => cx.tape.softmax(scores, 3)?,
        };
        let weights = cx.dropout(weights, dropout)?;
        let mixed = cx.tape.matmul(weights, v)?;
        let mixed = cx.tape.permute(mixed, &[1, 2, 0, 3])?;
        let mixed = cx.tape.reshape(mixed, [b, tq, self.width])?;
        self.output.forward(cx, mixed)
    }
}
