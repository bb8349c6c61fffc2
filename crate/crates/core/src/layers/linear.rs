use super::{Ctx, Init, ParamId, ParamStore};
use crate::tensor::{Result, Rng, Var};

/// `x · W + b` with `W: [in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, seed: &Rng) -> Self {
        let weight = store.add(
            &format!("{prefix}.weight"),
            &[fan_in, fan_out],
            Init::XavierUniform { fan_in, fan_out },
            seed,
        );
        let bias = store.add(&format!("{prefix}.bias"), &[fan_out], Init::Zeros, seed);
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let (w, b) = (cx.p(self.weight), cx.p(self.bias));
        let y = cx.tape.matmul(x, w)?;
        cx.tape.add(y, b)
    }
}

/// Two-layer perceptron with SiLU in between.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, prefix: &str, dims: [usize; 3], seed: &Rng) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{prefix}.fc1"), dims[0], dims[1], seed),
            fc2: Linear::new(store, &format!("{prefix}.fc2"), dims[1], dims[2], seed),
        }
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(cx, x)?;
        let h = cx.tape.silu(h);
        self.fc2.forward(cx, h)
    }
}
