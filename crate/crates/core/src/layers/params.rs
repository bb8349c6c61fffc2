use std::collections::HashMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::tensor::{Rng, Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f64>>,
}

/// Named, ordered parameter tensors.
///
/// Registration order is the canonical order for checkpoints and optimizer
/// state. Initial values are drawn from a stream keyed by (seed, name), so two
/// architectures that share a parameter name start from the same values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    XavierUniform {
        fan_in: usize,
        fan_out: usize,
    },
}

fn name_key(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, seed: &Rng) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::XavierUniform { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = seed.fork(name_key(name));
                (0..n).map(|_| rng.uniform_in(-bound, bound)).collect()
            }
        };
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: Arc::new(data),
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| &self.params[id.0])
    }

    pub fn tensor(&self, id: ParamId) -> Tensor {
        let p = &self.params[id.0];
        Tensor::new(p.shape.clone(), p.data.as_ref().clone()).expect("param shape")
    }

    /// Mutable access; copies only if a tape still holds the buffer.
    pub fn data_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.params[id.0].data)
    }

    pub fn set(&mut self, id: ParamId, data: Vec<f64>) {
        assert_eq!(
            data.len(),
            self.params[id.0].data.len(),
            "size change for {}",
            self.params[id.0].name
        );
        self.params[id.0].data = Arc::new(data);
    }

    /// Register every parameter on `tape` as a leaf, in store order.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf_shared(p.shape.clone(), Arc::clone(&p.data), requires_grad))
            .collect()
    }

    /// Same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// Round every value through f32, the checkpoint storage precision.
    pub fn quantized_f32(&self) -> ParamStore {
        let mut out = self.clone();
        for p in &mut out.params {
            p.data = Arc::new(p.data.iter().map(|&v| v as f32 as f64).collect());
        }
        out
    }
}
