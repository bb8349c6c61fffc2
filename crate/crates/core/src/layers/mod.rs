//! Transformer building blocks with a swappable normalization site.

mod attention;
mod block;
mod linear;
mod norm;
mod params;

pub use attention::MultiHeadAttention;
pub use block::{Block, BlockConfig};
pub use linear::{Linear, Mlp};
pub use norm::{dyt_forward, layernorm_forward, DyTParams, LayerNormParams, Norm, NormKind, DYT_ALPHA_INIT, LAYER_NORM_EPS};
pub use params::{Init, Param, ParamId, ParamStore};

use crate::tensor::{Result, Rng, Tape, Var};

/// Forward-pass context: the tape, the bound parameter leaves, and the
/// dropout stream (absent at inference).
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a [Var],
    pub dropout_rng: Option<&'a mut Rng>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a [Var]) -> Self {
        Self {
            tape,
            params,
            dropout_rng: None,
        }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    /// Inverted dropout; identity when `rate == 0` or no stream is attached.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.dropout_rng.as_deref_mut() else {
            return Ok(x);
        };
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let factors = (0..self.tape.value(x).len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        self.tape.mul_const(x, factors)
    }
}
