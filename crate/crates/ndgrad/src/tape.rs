//! The recording tape and the reverse sweep.
//!
//! Operations are appended in execution order, so the node list is already
//! topologically sorted; backward walks it once from the end.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::array::{broadcast_index_map, numel, strides, Array};
use crate::conv;
use crate::error::{NdError, Result};

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Acos(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    Abs(usize),
    MaxScalar(usize, f64),
    MinScalar(usize, f64),
    Sum { x: usize, keep: Vec<usize> },
    Mean { x: usize, keep: Vec<usize>, count: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Reshape(usize),
    Permute { x: usize, axes: Vec<usize> },
    MatMul(usize, usize),
    Conv1d { input: usize, weight: usize, bias: usize },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Acos(_) => "acos",
            Op::Clamp { .. } => "clamp",
            Op::Abs(_) => "abs",
            Op::MaxScalar(..) => "max_scalar",
            Op::MinScalar(..) => "min_scalar",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Permute { .. } => "permute",
            Op::MatMul(..) => "matmul",
            Op::Conv1d { .. } => "conv1d",
        }
    }
}

struct Node {
    value: Rc<Array>,
    op: Op,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Define-by-run record of array operations.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Array) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Array) -> Var<'_> {
        self.push(value, Op::Constant)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array::scalar(value))
    }

    pub(crate) fn push(&self, value: Array, op: Op) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var { tape: self, id }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Array> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    /// Number of recorded nodes, leaves and constants included.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Recorded node count per operation kind.
    pub fn op_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for node in &self.inner.borrow().nodes {
            *counts.entry(node.op.name()).or_insert(0) += 1;
        }
        counts
    }

    /// Reverse sweep from a scalar root. The tape cannot be swept twice.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(root.tape, self) {
            return Err(NdError::ForeignVar);
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(NdError::TapeConsumed);
        }
        let root_value = &inner.nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(NdError::NotScalar(root_value.shape().to_vec()));
        }
        inner.consumed = true;
        let nodes = &inner.nodes;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => grads[id] = Some(g),
                Op::Constant => {}
                op => backprop(op, node, nodes, &g, &mut grads),
            }
        }

        let out = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) => Some(
                    Array::new(node.value.shape().to_vec(), g).expect("gradient shape"),
                ),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: out })
    }
}

/// Gradients of the backward root with respect to every leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when the root does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Array> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf; zeros when the root does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Array {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Array::zeros(var.shape()))
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn unary(
    grads: &mut [Option<Vec<f64>>],
    x: usize,
    nodes: &[Node],
    g: &[f64],
    local: impl Fn(usize) -> f64,
) {
    let n = nodes[x].value.len();
    accumulate(grads, x, n, |acc| {
        for i in 0..n {
            acc[i] += g[i] * local(i);
        }
    });
}

/// Adds `g` (shaped like `out`) into the gradient of `x`, summing over
/// broadcast axes.
fn reduce_into(grads: &mut [Option<Vec<f64>>], x: usize, x_shape: &[usize], out_shape: &[usize], g: &[f64], scale: impl Fn(usize) -> f64) {
    let n = numel(x_shape);
    if x_shape == out_shape {
        accumulate(grads, x, n, |acc| {
            for i in 0..n {
                acc[i] += g[i] * scale(i);
            }
        });
    } else {
        let map = broadcast_index_map(x_shape, out_shape);
        accumulate(grads, x, n, |acc| {
            for (i, &m) in map.iter().enumerate() {
                acc[m] += g[i] * scale(i);
            }
        });
    }
}

fn backprop(op: &Op, node: &Node, nodes: &[Node], g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &node.value;
    let out_shape = out.shape();
    match op {
        Op::Leaf | Op::Constant => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
            reduce_into(grads, *a, nodes[*a].value.shape(), out_shape, g, |_| 1.0);
            reduce_into(grads, *b, nodes[*b].value.shape(), out_shape, g, |_| sign);
        }
        Op::Mul(a, b) | Op::Div(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let ma = broadcast_index_map(va.shape(), out_shape);
            let mb = broadcast_index_map(vb.shape(), out_shape);
            let (da, db) = (va.data(), vb.data());
            if matches!(op, Op::Mul(..)) {
                reduce_into(grads, *a, va.shape(), out_shape, g, |i| db[mb[i]]);
                reduce_into(grads, *b, vb.shape(), out_shape, g, |i| da[ma[i]]);
            } else {
                reduce_into(grads, *a, va.shape(), out_shape, g, |i| 1.0 / db[mb[i]]);
                reduce_into(grads, *b, vb.shape(), out_shape, g, |i| {
                    let bv = db[mb[i]];
                    -da[ma[i]] / (bv * bv)
                });
            }
        }
        Op::Neg(x) => unary(grads, *x, nodes, g, |_| -1.0),
        Op::Scale(x, c) => unary(grads, *x, nodes, g, |_| *c),
        Op::AddScalar(x) => unary(grads, *x, nodes, g, |_| 1.0),
        Op::Relu(x) => {
            let xv = nodes[*x].value.clone();
            unary(grads, *x, nodes, g, |i| if xv.data()[i] > 0.0 { 1.0 } else { 0.0 })
        }
        Op::Exp(x) => unary(grads, *x, nodes, g, |i| out.data()[i]),
        Op::Log(x) => {
            let xv = nodes[*x].value.clone();
            unary(grads, *x, nodes, g, |i| 1.0 / xv.data()[i])
        }
        Op::Sqrt(x) => unary(grads, *x, nodes, g, |i| 0.5 / out.data()[i]),
        Op::Acos(x) => {
            let xv = nodes[*x].value.clone();
            unary(grads, *x, nodes, g, |i| {
                let v = xv.data()[i];
                -1.0 / (1.0 - v * v).sqrt()
            })
        }
        Op::Clamp { x, lo, hi } => {
            let xv = nodes[*x].value.clone();
            unary(grads, *x, nodes, g, |i| {
                let v = xv.data()[i];
                if v >= *lo && v <= *hi { 1.0 } else { 0.0 }
            })
        }
        Op::Abs(x) => {
            let xv = nodes[*x].value.clone();
            unary(grads, *x, nodes, g, |i| {
                let v = xv.data()[i];
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
        }
        Op::MaxScalar(x, c) => {
            let xv = nodes[*x].value.clone();
            unary(grads, *x, nodes, g, |i| if xv.data()[i] > *c { 1.0 } else { 0.0 })
        }
        Op::MinScalar(x, c) => {
            let xv = nodes[*x].value.clone();
            unary(grads, *x, nodes, g, |i| if xv.data()[i] < *c { 1.0 } else { 0.0 })
        }
        Op::Sum { x, keep } | Op::Mean { x, keep, .. } => {
            let scale = match op {
                Op::Mean { count, .. } => 1.0 / *count as f64,
                _ => 1.0,
            };
            let x_shape = nodes[*x].value.shape().to_vec();
            let map = broadcast_index_map(keep, &x_shape);
            accumulate(grads, *x, numel(&x_shape), |acc| {
                for (i, &m) in map.iter().enumerate() {
                    acc[i] += g[m] * scale;
                }
            });
        }
        Op::Concat { inputs, axis } => {
            let outer: usize = out_shape[..*axis].iter().product();
            let inner: usize = out_shape[axis + 1..].iter().product();
            let total = out_shape[*axis] * inner;
            let mut offset = 0;
            for &id in inputs {
                let extent = nodes[id].value.shape()[*axis] * inner;
                accumulate(grads, id, outer * extent, |acc| {
                    for o in 0..outer {
                        let src = &g[o * total + offset..o * total + offset + extent];
                        for (a, s) in acc[o * extent..(o + 1) * extent].iter_mut().zip(src) {
                            *a += s;
                        }
                    }
                });
                offset += extent;
            }
        }
        Op::Slice { x, axis, start } => {
            let x_shape = nodes[*x].value.shape();
            let outer: usize = x_shape[..*axis].iter().product();
            let inner: usize = x_shape[axis + 1..].iter().product();
            let src_block = x_shape[*axis] * inner;
            let dst_block = out_shape[*axis] * inner;
            let begin = start * inner;
            accumulate(grads, *x, numel(x_shape), |acc| {
                for o in 0..outer {
                    let dst = &mut acc[o * src_block + begin..o * src_block + begin + dst_block];
                    for (a, s) in dst.iter_mut().zip(&g[o * dst_block..(o + 1) * dst_block]) {
                        *a += s;
                    }
                }
            });
        }
        Op::Reshape(x) => unary(grads, *x, nodes, g, |_| 1.0),
        Op::Permute { x, axes } => {
            let x_shape = nodes[*x].value.shape();
            let map = permute_map(x_shape, axes);
            accumulate(grads, *x, numel(x_shape), |acc| {
                for (i, &src) in map.iter().enumerate() {
                    acc[src] += g[i];
                }
            });
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let (ga, gb) = matmul_backward(va, vb, g);
            accumulate(grads, *a, va.len(), |acc| add_assign(acc, &ga));
            accumulate(grads, *b, vb.len(), |acc| add_assign(acc, &gb));
        }
        Op::Conv1d {
            input,
            weight,
            bias,
        } => {
            let (vi, vw) = (&nodes[*input].value, &nodes[*weight].value);
            let dims = conv::Dims::of(vi.shape(), vw.shape());
            let (gi, gw, gbias) = conv::backward(&dims, vi.data(), vw.data(), g);
            accumulate(grads, *input, vi.len(), |acc| add_assign(acc, &gi));
            accumulate(grads, *weight, vw.len(), |acc| add_assign(acc, &gw));
            accumulate(grads, *bias, gbias.len(), |acc| add_assign(acc, &gbias));
        }
    }
}

fn add_assign(acc: &mut [f64], src: &[f64]) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += s;
    }
}

/// For each flat output index of the permuted array, the flat source index.
pub(crate) fn permute_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = shape.len();
    let n = numel(shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

pub(crate) struct MatDims {
    pub batch: usize,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub b_batched: bool,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Option<MatDims> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (n, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, m) = (b[b.len() - 2], b[b.len() - 1]);
    if k != kb {
        return None;
    }
    let a_lead = &a[..a.len() - 2];
    let b_lead = &b[..b.len() - 2];
    let b_batched = if b_lead.is_empty() {
        false
    } else if b_lead == a_lead {
        true
    } else {
        return None;
    };
    Some(MatDims {
        batch: a_lead.iter().product(),
        n,
        k,
        m,
        b_batched,
    })
}

pub(crate) fn matmul_forward(d: &MatDims, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d.batch * d.n * d.m];
    for bt in 0..d.batch {
        let ao = bt * d.n * d.k;
        let bo = if d.b_batched { bt * d.k * d.m } else { 0 };
        let oo = bt * d.n * d.m;
        for i in 0..d.n {
            for p in 0..d.k {
                let av = a[ao + i * d.k + p];
                for j in 0..d.m {
                    out[oo + i * d.m + j] += av * b[bo + p * d.m + j];
                }
            }
        }
    }
    out
}

fn matmul_backward(va: &Array, vb: &Array, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = matmul_dims(va.shape(), vb.shape()).expect("checked at forward");
    let (a, b) = (va.data(), vb.data());
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    for bt in 0..d.batch {
        let ao = bt * d.n * d.k;
        let bo = if d.b_batched { bt * d.k * d.m } else { 0 };
        let oo = bt * d.n * d.m;
        for i in 0..d.n {
            for p in 0..d.k {
                let mut acc = 0.0;
                let av = a[ao + i * d.k + p];
                for j in 0..d.m {
                    let gv = g[oo + i * d.m + j];
                    acc += gv * b[bo + p * d.m + j];
                    gb[bo + p * d.m + j] += av * gv;
                }
                ga[ao + i * d.k + p] += acc;
            }
        }
    }
    (ga, gb)
}
