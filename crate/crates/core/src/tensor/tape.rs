use std::sync::Arc;

use super::ops::Op;
use super::{numel, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub value: Arc<Vec<f64>>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Linear record of executed ops.
///
/// Node ids grow monotonically, so the record is always in topological order
/// and the backward sweep is a reverse scan. A tape built with
/// [`Tape::inference`] keeps values only; nothing on it requires grad.
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    record: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
        }
    }

    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf holding `t`. Gradients are tracked only on a recording tape.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let Tensor { shape, data } = t;
        self.leaf_shared(shape, Arc::new(data), requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf over an existing buffer, used to bind parameters without copying.
    pub fn leaf_shared(&mut self, shape: Vec<usize>, data: Arc<Vec<f64>>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        let id = self.nodes.len();
        self.nodes.push(Node {
            shape,
            value: data,
            op: Op::Leaf,
            requires_grad: requires_grad && self.record,
        });
        Var(id)
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        self.push_shared(shape, Arc::new(value), op)
    }

    pub(crate) fn push_shared(&mut self, shape: Vec<usize>, value: Arc<Vec<f64>>, op: Op) -> Var {
        let requires_grad = self.record && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        let id = self.nodes.len();
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(id)
    }

    pub(crate) fn needs_grad(&self, vars: &[Var]) -> bool {
        self.record && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub(crate) fn value_arc(&self, v: Var) -> &Arc<Vec<f64>> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.value.as_ref().clone(),
        }
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// across fan-out; every recorded op is visited at most once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if numel(&root.shape) != 1 {
            return Err(TensorError::NonScalarLoss(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            node.op.backward(node, &g, &self.nodes, &mut grads);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of leaves produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `v` is unreachable from the loss or does not require grad.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Add into the gradient buffer of `v`, creating it on first touch.
pub(crate) fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, f: impl FnOnce(&mut [f64])) {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
    f(buf);
}

impl Tape {
    /// Drop every node recorded after the first `len`; handles past `len` become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }
}
