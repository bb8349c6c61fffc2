use std::sync::Arc;

use super::tape::{accumulate, Node, Tape, Var};
use super::{broadcast_shapes, broadcast_strides, numel, split_axis, Result, TensorError};
use super::{kernels, math};

/// Elementwise op kinds accepted by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Div,
    Tanh,
    Exp,
    Log,
    Neg,
    Abs,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum UnaryKind {
    Tanh,
    Exp,
    Log,
    Neg,
    Abs,
    Softplus,
    Sigmoid,
    Silu,
    Sqrt,
    Square,
    Scale(f64),
    Shift(f64),
    ClampMin(f64),
}

pub(crate) enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Unary {
        kind: UnaryKind,
        a: Var,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Reduce {
        kind: ReduceKind,
        a: Var,
        axis: usize,
    },
    ReduceMax {
        a: Var,
        axis: usize,
        index: Vec<usize>,
    },
    SumAll {
        a: Var,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    MaskedSoftmax {
        a: Var,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    IndexSelect {
        a: Var,
        axis: usize,
        indices: Vec<usize>,
    },
    Dyt {
        x: Var,
        alpha: Var,
        gamma: Var,
        beta: Var,
        squashed: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::MatMul { a, b } => vec![*a, *b],
            Op::Unary { a, .. }
            | Op::Reduce { a, .. }
            | Op::ReduceMax { a, .. }
            | Op::SumAll { a }
            | Op::Softmax { a, .. }
            | Op::MaskedSoftmax { a }
            | Op::Reshape { a }
            | Op::Permute { a, .. }
            | Op::IndexSelect { a, .. } => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Dyt { x, alpha, gamma, beta, .. } => vec![*x, *alpha, *gamma, *beta],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }

    pub(crate) fn backward(&self, node: &Node, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
        match self {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => binary_backward(*kind, *a, *b, node, g, nodes, grads),
            Op::Unary { kind, a } => {
                let x = &nodes[a.0].value;
                let y = &node.value;
                accumulate(grads, nodes, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * unary_derivative(*kind, x[i], y[i]);
                    }
                });
            }
            Op::MatMul { a, b } => matmul_backward(*a, *b, node, g, nodes, grads),
            Op::Reduce { kind, a, axis } => {
                let (outer, len, inner) = split_axis(&nodes[a.0].shape, *axis, "reduce").unwrap();
                let scale = match kind {
                    ReduceKind::Mean => 1.0 / len as f64,
                    _ => 1.0,
                };
                accumulate(grads, nodes, *a, |ga| {
                    for o in 0..outer {
                        for j in 0..len {
                            let dst = &mut ga[(o * len + j) * inner..(o * len + j + 1) * inner];
                            let src = &g[o * inner..(o + 1) * inner];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s * scale;
                            }
                        }
                    }
                });
            }
            Op::ReduceMax { a, axis, index } => {
                let (_, len, inner) = split_axis(&nodes[a.0].shape, *axis, "max").unwrap();
                accumulate(grads, nodes, *a, |ga| {
                    for (r, &j) in index.iter().enumerate() {
                        let (o, i) = (r / inner, r % inner);
                        ga[(o * len + j) * inner + i] += g[r];
                    }
                });
            }
            Op::SumAll { a } => accumulate(grads, nodes, *a, |ga| {
                for v in ga.iter_mut() {
                    *v += g[0];
                }
            }),
            Op::Softmax { a, axis } => {
                let (outer, len, inner) = split_axis(&node.shape, *axis, "softmax").unwrap();
                let y = &node.value;
                accumulate(grads, nodes, *a, |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                ga[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::MaskedSoftmax { a } => {
                let len = *node.shape.last().unwrap();
                let y = &node.value;
                accumulate(grads, nodes, *a, |ga| {
                    if len == 0 {
                        return;
                    }
                    for ((gr, yr), dr) in g.chunks_exact(len).zip(y.chunks_exact(len)).zip(ga.chunks_exact_mut(len)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for j in 0..len {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Reshape { a } => accumulate(grads, nodes, *a, |ga| {
                for (d, s) in ga.iter_mut().zip(g) {
                    *d += s;
                }
            }),
            Op::Permute { a, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let back = permute_data(g, &node.shape, &inverse);
                accumulate(grads, nodes, *a, |ga| {
                    for (d, s) in ga.iter_mut().zip(&back) {
                        *d += s;
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis, "concat").unwrap();
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].shape[*axis];
                    accumulate(grads, nodes, *p, |gp| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut gp[o * len * inner..(o + 1) * len * inner];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::IndexSelect { a, axis, indices } => {
                let (outer, len, inner) = split_axis(&nodes[a.0].shape, *axis, "index_select").unwrap();
                let n = indices.len();
                accumulate(grads, nodes, *a, |ga| {
                    for o in 0..outer {
                        for (j, &src) in indices.iter().enumerate() {
                            let from = &g[(o * n + j) * inner..(o * n + j + 1) * inner];
                            let to = &mut ga[(o * len + src) * inner..(o * len + src + 1) * inner];
                            for (d, s) in to.iter_mut().zip(from) {
                                *d += s;
                            }
                        }
                    }
                });
            }
            Op::Dyt {
                x,
                alpha,
                gamma,
                beta,
                squashed,
            } => {
                let xv = &nodes[x.0].value;
                let av = nodes[alpha.0].value[0];
                let gv = &nodes[gamma.0].value;
                let c = gv.len();
                accumulate(grads, nodes, *x, |gx| {
                    for i in 0..gx.len() {
                        let t = squashed[i];
                        gx[i] += g[i] * gv[i % c] * av * (1.0 - t * t);
                    }
                });
                accumulate(grads, nodes, *alpha, |ga| {
                    let mut s = 0.0;
                    for i in 0..g.len() {
                        let t = squashed[i];
                        s += g[i] * gv[i % c] * xv[i] * (1.0 - t * t);
                    }
                    ga[0] += s;
                });
                accumulate(grads, nodes, *gamma, |gg| {
                    for (i, (gi, t)) in g.iter().zip(squashed).enumerate() {
                        gg[i % c] += gi * t;
                    }
                });
                accumulate(grads, nodes, *beta, |gb| {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % c] += gi;
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let gv = &nodes[gamma.0].value;
                let c = gv.len();
                accumulate(grads, nodes, *x, |gx| {
                    if c == 0 {
                        return;
                    }
                    for (r, &rstd) in inv_std.iter().enumerate() {
                        let base = r * c;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..c {
                            let d = g[base + j] * gv[j];
                            mean_d += d;
                            mean_dx += d * normalized[base + j];
                        }
                        mean_d /= c as f64;
                        mean_dx /= c as f64;
                        for j in 0..c {
                            let d = g[base + j] * gv[j];
                            gx[base + j] += rstd * (d - mean_d - normalized[base + j] * mean_dx);
                        }
                    }
                });
                accumulate(grads, nodes, *gamma, |gg| {
                    for (i, (gi, n)) in g.iter().zip(normalized).enumerate() {
                        gg[i % c] += gi * n;
                    }
                });
                accumulate(grads, nodes, *beta, |gb| {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % c] += gi;
                    }
                });
            }
        }
    }
}

// ---------------------------------------------------------------------------
// broadcasting

/// How output indices of a broadcast binary op map onto its operands.
enum Mapping {
    Same,
    /// `b` repeats every `b.len()` elements of `a`.
    BSuffix,
    /// `a` repeats every `a.len()` elements of `b`.
    ASuffix,
    General {
        ia: Vec<usize>,
        ib: Vec<usize>,
    },
}

fn mapping(a: &[usize], b: &[usize], out: &[usize]) -> Mapping {
    if a == b {
        return Mapping::Same;
    }
    if a == out && out.ends_with(b) {
        return Mapping::BSuffix;
    }
    if b == out && out.ends_with(a) {
        return Mapping::ASuffix;
    }
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let n = numel(out);
    let mut ia = Vec::with_capacity(n);
    let mut ib = Vec::with_capacity(n);
    let mut idx = vec![0usize; out.len()];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        ia.push(oa);
        ib.push(ob);
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
    Mapping::General { ia, ib }
}

fn apply_binary(map: &Mapping, n: usize, a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    match map {
        Mapping::Same => a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect(),
        Mapping::BSuffix => {
            let mut out = Vec::with_capacity(n);
            for chunk in a.chunks_exact(b.len()) {
                out.extend(chunk.iter().zip(b).map(|(x, y)| f(*x, *y)));
            }
            out
        }
        Mapping::ASuffix => {
            let mut out = Vec::with_capacity(n);
            for chunk in b.chunks_exact(a.len()) {
                out.extend(a.iter().zip(chunk).map(|(x, y)| f(*x, *y)));
            }
            out
        }
        Mapping::General { ia, ib } => ia.iter().zip(ib).map(|(&i, &j)| f(a[i], b[j])).collect(),
    }
}

/// Visit `(out_index, a_index, b_index)` for every output element.
fn for_each_pair(map: &Mapping, n: usize, la: usize, lb: usize, mut f: impl FnMut(usize, usize, usize)) {
    match map {
        Mapping::Same => (0..n).for_each(|i| f(i, i, i)),
        Mapping::BSuffix => (0..n).for_each(|i| f(i, i, i % lb)),
        Mapping::ASuffix => (0..n).for_each(|i| f(i, i % la, i)),
        Mapping::General { ia, ib } => (0..n).for_each(|i| f(i, ia[i], ib[i])),
    }
}

fn binary_backward(kind: BinaryKind, a: Var, b: Var, node: &Node, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    let (na, nb) = (&nodes[a.0], &nodes[b.0]);
    let map = mapping(&na.shape, &nb.shape, &node.shape);
    let n = g.len();
    let (av, bv, out) = (&na.value, &nb.value, &node.value);
    let (la, lb) = (av.len(), bv.len());
    accumulate(grads, nodes, a, |ga| {
        for_each_pair(&map, n, la, lb, |i, ia, ib| {
            ga[ia] += g[i]
                * match kind {
                    BinaryKind::Add | BinaryKind::Sub => 1.0,
                    BinaryKind::Mul => bv[ib],
                    BinaryKind::Div => 1.0 / bv[ib],
                };
        })
    });
    accumulate(grads, nodes, b, |gb| {
        for_each_pair(&map, n, la, lb, |i, ia, ib| {
            gb[ib] += g[i]
                * match kind {
                    BinaryKind::Add => 1.0,
                    BinaryKind::Sub => -1.0,
                    BinaryKind::Mul => av[ia],
                    BinaryKind::Div => -out[i] / bv[ib],
                };
        })
    });
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn unary_value(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Tanh => math::tanh(x),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => x.ln(),
        UnaryKind::Neg => -x,
        UnaryKind::Abs => x.abs(),
        UnaryKind::Softplus => softplus(x),
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Silu => x * sigmoid(x),
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Square => x * x,
        UnaryKind::Scale(c) => c * x,
        UnaryKind::Shift(c) => x + c,
        UnaryKind::ClampMin(c) => x.max(c),
    }
}

fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Tanh => 1.0 - y * y,
        UnaryKind::Exp => y,
        UnaryKind::Log => 1.0 / x,
        UnaryKind::Neg => -1.0,
        UnaryKind::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryKind::Softplus => sigmoid(x),
        UnaryKind::Sigmoid => y * (1.0 - y),
        UnaryKind::Silu => {
            let s = sigmoid(x);
            s + x * s * (1.0 - s)
        }
        UnaryKind::Sqrt => 0.5 / y,
        UnaryKind::Square => 2.0 * x,
        UnaryKind::Scale(c) => c,
        UnaryKind::Shift(_) => 1.0,
        UnaryKind::ClampMin(c) => {
            if x > c {
                1.0
            } else {
                0.0
            }
        }
    }
}

// ---------------------------------------------------------------------------
// matmul kernels (row-major, accumulate into `out`)

/// out[m,n] += a[m,k] · b[k,n]
fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += s * bv;
            }
        }
    }
}

/// out[m,k] += g[m,n] · b[k,n]ᵀ
fn gemm_nt(m: usize, n: usize, k: usize, g: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// out[k,n] += a[m,k]ᵀ · g[m,n]
fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], g: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += s * gv;
            }
        }
    }
}

struct MatMulPlan {
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
    /// (a offset, b offset) per output batch, in matrices.
    batches: Vec<(usize, usize)>,
}

fn matmul_plan(a: &[usize], b: &[usize]) -> Result<MatMulPlan> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(mismatch());
    }
    let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let batch = broadcast_shapes(ab, bb, "matmul").map_err(|_| mismatch())?;
    let mut out_shape = batch.clone();
    out_shape.extend([m, n]);
    let count = numel(&batch);
    let batches = if bb.iter().all(|&d| d == 1) && ab == batch.as_slice() {
        (0..count).map(|i| (i, 0)).collect()
    } else {
        let sa = broadcast_strides(ab, &batch);
        let sb = broadcast_strides(bb, &batch);
        let mut idx = vec![0usize; batch.len()];
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let oa = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
            let ob = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
            out.push((oa, ob));
            for d in (0..batch.len()).rev() {
                idx[d] += 1;
                if idx[d] < batch[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    };
    Ok(MatMulPlan {
        m,
        k,
        n,
        out_shape,
        batches,
    })
}

fn matmul_backward(a: Var, b: Var, node: &Node, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    let plan = matmul_plan(&nodes[a.0].shape, &nodes[b.0].shape).unwrap();
    let _ = node;
    let MatMulPlan { m, k, n, .. } = plan;
    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
    let shared_b = plan.batches.iter().all(|&(_, ob)| ob == 0) && nodes[b.0].shape.len() == 2;
    accumulate(grads, nodes, a, |ga| {
        for (bi, &(oa, ob)) in plan.batches.iter().enumerate() {
            gemm_nt(
                m,
                n,
                k,
                &g[bi * m * n..(bi + 1) * m * n],
                &bv[ob * k * n..(ob + 1) * k * n],
                &mut ga[oa * m * k..(oa + 1) * m * k],
            );
        }
    });
    accumulate(grads, nodes, b, |gb| {
        if shared_b {
            let rows = plan.batches.len() * m;
            // batches are contiguous in `a` when b is shared and a is not broadcast
            if plan.batches.iter().enumerate().all(|(i, &(oa, _))| oa == i) {
                gemm_tn(rows, k, n, &av[..rows * k], g, gb);
                return;
            }
        }
        for (bi, &(oa, ob)) in plan.batches.iter().enumerate() {
            gemm_tn(
                m,
                k,
                n,
                &av[oa * m * k..(oa + 1) * m * k],
                &g[bi * m * n..(bi + 1) * m * n],
                &mut gb[ob * k * n..(ob + 1) * k * n],
            );
        }
    });
}

pub(crate) fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let n = data.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(data[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// forward ops

impl Tape {
    /// Dispatch for the elementwise family; binary kinds require `b`.
    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        let binary = |k| {
            b.ok_or_else(|| TensorError::Invalid(format!("{kind:?} needs two operands")))
                .map(|b| (k, b))
        };
        match kind {
            ElementwiseKind::Add => binary(BinaryKind::Add).and_then(|(k, b)| self.binary(k, a, b)),
            ElementwiseKind::Sub => binary(BinaryKind::Sub).and_then(|(k, b)| self.binary(k, a, b)),
            ElementwiseKind::Mul => binary(BinaryKind::Mul).and_then(|(k, b)| self.binary(k, a, b)),
            ElementwiseKind::Div => binary(BinaryKind::Div).and_then(|(k, b)| self.binary(k, a, b)),
            ElementwiseKind::Tanh => Ok(self.unary(UnaryKind::Tanh, a)),
            ElementwiseKind::Exp => Ok(self.unary(UnaryKind::Exp, a)),
            ElementwiseKind::Log => self.log(a),
            ElementwiseKind::Neg => Ok(self.unary(UnaryKind::Neg, a)),
            ElementwiseKind::Abs => Ok(self.unary(UnaryKind::Abs, a)),
            ElementwiseKind::Softplus => Ok(self.unary(UnaryKind::Softplus, a)),
        }
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let op = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let out_shape = broadcast_shapes(self.shape(a), self.shape(b), op)?;
        if kind == BinaryKind::Div && self.value(b).contains(&0.0) {
            return Err(TensorError::Domain { op });
        }
        let map = mapping(self.shape(a), self.shape(b), &out_shape);
        let n = numel(&out_shape);
        let (av, bv) = (self.value(a), self.value(b));
        let data = match kind {
            BinaryKind::Add => apply_binary(&map, n, av, bv, |x, y| x + y),
            BinaryKind::Sub => apply_binary(&map, n, av, bv, |x, y| x - y),
            BinaryKind::Mul => apply_binary(&map, n, av, bv, |x, y| x * y),
            BinaryKind::Div => apply_binary(&map, n, av, bv, |x, y| x / y),
        };
        Ok(self.push(out_shape, data, Op::Binary { kind, a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let data: Vec<f64> = self.value(a).iter().map(|&x| unary_value(kind, x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, Op::Unary { kind, a })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&v| v <= 0.0) {
            return Err(TensorError::Domain { op: "log" });
        }
        Ok(self.unary(UnaryKind::Log, a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Neg, a)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Abs, a)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Softplus, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }

    /// x · sigmoid(x)
    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Silu, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&v| v < 0.0) {
            return Err(TensorError::Domain { op: "sqrt" });
        }
        Ok(self.unary(UnaryKind::Sqrt, a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Square, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(UnaryKind::Scale(c), a)
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        self.unary(UnaryKind::Shift(c), a)
    }

    /// `max(x, c)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        self.unary(UnaryKind::ClampMin(c), a)
    }

    /// Batched `a[.., m, k] · b[.., k, n]` with broadcast batch dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = matmul_plan(self.shape(a), self.shape(b))?;
        let MatMulPlan { m, k, n, .. } = plan;
        let mut out = vec![0.0; numel(&plan.out_shape)];
        let (av, bv) = (self.value(a), self.value(b));
        for (bi, &(oa, ob)) in plan.batches.iter().enumerate() {
            gemm_nn(
                m,
                k,
                n,
                &av[oa * m * k..(oa + 1) * m * k],
                &bv[ob * k * n..(ob + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        Ok(self.push(plan.out_shape, out, Op::MatMul { a, b }))
    }

    /// Reduce along `axis`, dropping it. `Max` routes gradient to the first maximum.
    pub fn reduce(&mut self, kind: ReduceKind, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis, "reduce")?;
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let av = self.value(a);
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..len {
                        let src = &av[(o * len + j) * inner..(o * len + j + 1) * inner];
                        for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    if len == 0 {
                        return Err(TensorError::Invalid("mean over empty axis".into()));
                    }
                    let s = 1.0 / len as f64;
                    out.iter_mut().for_each(|v| *v *= s);
                }
                Ok(self.push(out_shape, out, Op::Reduce { kind, a, axis }))
            }
            ReduceKind::Max => {
                if len == 0 {
                    return Err(TensorError::Invalid("max over empty axis".into()));
                }
                let mut out = Vec::with_capacity(outer * inner);
                let mut index = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = 0;
                        let mut bv = av[o * len * inner + i];
                        for j in 1..len {
                            let v = av[(o * len + j) * inner + i];
                            if v > bv {
                                bv = v;
                                best = j;
                            }
                        }
                        out.push(bv);
                        index.push(best);
                    }
                }
                Ok(self.push(out_shape, out, Op::ReduceMax { a, axis, index }))
            }
        }
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceKind::Sum, a, axis)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceKind::Mean, a, axis)
    }

    /// Index of the maximum along `axis` (not differentiable).
    pub fn argmax(&self, a: Var, axis: usize) -> Result<Vec<usize>> {
        self.tensor(a).argmax(axis)
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        self.push(vec![], vec![s], Op::SumAll { a })
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis, "softmax")?;
        let av = self.value(a);
        let mut out = vec![0.0; av.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| av[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (av[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        Ok(self.push(shape, out, Op::Softmax { a, axis }))
    }

    /// Softmax over the last axis where `mask[i % mask.len()] == false`
    /// blocks an entry (probability exactly zero). A row with no open entry
    /// is an error.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let len = *shape.last().ok_or(TensorError::InvalidAxis {
            op: "masked_softmax",
            axis: 0,
            rank: 0,
        })?;
        let av = self.value(a);
        if mask.is_empty() || !av.len().is_multiple_of(mask.len()) || !mask.len().is_multiple_of(len.max(1)) {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                lhs: shape,
                rhs: vec![mask.len()],
            });
        }
        let mut out = vec![0.0; av.len()];
        if len > 0 {
            for (r, (row, dst)) in av.chunks_exact(len).zip(out.chunks_exact_mut(len)).enumerate() {
                let m = &mask[(r * len) % mask.len()..(r * len) % mask.len() + len];
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    if m[j] && row[j] > max {
                        max = row[j];
                    }
                }
                if max == f64::NEG_INFINITY {
                    return Err(TensorError::FullyMaskedRow { row: r });
                }
                let mut sum = 0.0;
                for j in 0..len {
                    if m[j] {
                        let e = (row[j] - max).exp();
                        dst[j] = e;
                        sum += e;
                    }
                }
                for v in dst.iter_mut() {
                    *v /= sum;
                }
            }
        }
        Ok(self.push(shape, out, Op::MaskedSoftmax { a }))
    }

    /// Same data, new shape. Shares the underlying buffer.
    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != self.value(a).len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let value = Arc::clone(self.value_arc(a));
        Ok(self.push_shared(shape, value, Op::Reshape { a }))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Invalid(format!("bad permutation {perm:?} for rank {}", shape.len())));
        }
        let data = permute_data(self.value(a), &shape, perm);
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        Ok(self.push(out_shape, data, Op::Permute { a, perm: perm.to_vec() }))
    }

    /// Swap the last two dims.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(TensorError::InvalidAxis {
                op: "transpose",
                axis: 1,
                rank: r,
            });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        split_axis(&base, axis, "concat")?;
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis];
                out.extend_from_slice(&self.value(*p)[o * len * inner..(o + 1) * len * inner]);
            }
        }
        Ok(self.push(
            out_shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Gather slices along `axis`; indices may repeat.
    pub fn index_select(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis, "index_select")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(TensorError::Invalid(format!("index {bad} out of range for axis of length {len}")));
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &j in indices {
                out.extend_from_slice(&av[(o * len + j) * inner..(o * len + j + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = indices.len();
        Ok(self.push(
            out_shape,
            out,
            Op::IndexSelect {
                a,
                axis,
                indices: indices.to_vec(),
            },
        ))
    }

    /// `gamma[c] · tanh(alpha · x[.., c]) + beta[c]`, touching each element once.
    pub fn dyt(&mut self, x: Var, alpha: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap_or(&0);
        if self.value(alpha).len() != 1 || self.value(gamma).len() != c || self.value(beta).len() != c || c == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "dyt",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let a = self.value(alpha)[0];
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let keep = self.needs_grad(&[x, alpha, gamma, beta]);
        let mut out = vec![0.0; xv.len()];
        let mut squashed = if keep { vec![0.0; xv.len()] } else { Vec::new() };
        kernels::dyt_forward(xv, a, gv, bv, &mut out, &mut squashed);
        Ok(self.push(
            shape,
            out,
            Op::Dyt {
                x,
                alpha,
                gamma,
                beta,
                squashed,
            },
        ))
    }

    /// Standardize over the last axis with population variance, then affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap_or(&0);
        if self.value(gamma).len() != c || self.value(beta).len() != c || c == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let keep = self.needs_grad(&[x, gamma, beta]);
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let rows = xv.len() / c;
        let mut out = vec![0.0; xv.len()];
        let mut normalized = if keep { vec![0.0; xv.len()] } else { Vec::new() };
        let mut inv_std = if keep { vec![0.0; rows] } else { Vec::new() };
        kernels::layer_norm_forward(xv, gv, bv, eps, &mut out, &mut normalized, &mut inv_std);
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        ))
    }

    /// Elementwise product with a constant 0/1·scale mask; used for dropout.
    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let c = self.leaf(super::Tensor::new(shape, factors)?, false);
        self.mul(a, c)
    }
}
