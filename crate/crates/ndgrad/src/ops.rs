use crate::array::{broadcast_index_map, broadcast_shape, numel, Array};
use crate::conv;
use crate::error::{NdError, Result};
use crate::tape::{matmul_dims, matmul_forward, permute_map, Op, Tape, Var};

fn finite(op: &'static str, data: Vec<f64>) -> Result<Vec<f64>> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(data)
    } else {
        Err(NdError::NonFinite { op })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> std::rc::Rc<Array> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(NdError::ForeignVar)
        }
    }

    fn record(&self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var<'t>> {
        let data = finite(op.name(), data)?;
        Ok(self.tape.push(Array::new(shape, data)?, op))
    }

    fn binary(self, other: Var<'t>, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| NdError::ShapeMismatch {
            op: name,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })?;
        let data = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_index_map(a.shape(), &shape);
            let mb = broadcast_index_map(b.shape(), &shape);
            let (da, db) = (a.data(), b.data());
            ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        self.record(shape, data, op)
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Result<Var<'t>> {
        let v = self.value();
        let data = v.data().iter().map(|&x| f(x)).collect();
        self.record(v.shape().to_vec(), data, op)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary(|x| -x, Op::Neg(self.id))
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(|x| x * c, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary(|x| x + c, Op::AddScalar(self.id))
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.mul(self)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(|x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(f64::exp, Op::Exp(self.id))
    }

    /// Natural log; non-positive arguments are a domain error.
    pub fn log(self) -> Result<Var<'t>> {
        if let Some(&bad) = self.value().data().iter().find(|&&x| !(x > 0.0)) {
            return Err(NdError::Domain { op: "log", value: bad });
        }
        self.unary(f64::ln, Op::Log(self.id))
    }

    /// Square root; negative arguments are a domain error.
    pub fn sqrt(self) -> Result<Var<'t>> {
        if let Some(&bad) = self.value().data().iter().find(|&&x| !(x >= 0.0)) {
            return Err(NdError::Domain { op: "sqrt", value: bad });
        }
        self.unary(f64::sqrt, Op::Sqrt(self.id))
    }

    /// Arc cosine. Callers clamp first: the derivative is unbounded at ±1.
    pub fn acos(self) -> Result<Var<'t>> {
        if let Some(&bad) = self.value().data().iter().find(|&&x| !(-1.0..=1.0).contains(&x)) {
            return Err(NdError::Domain { op: "acos", value: bad });
        }
        self.unary(f64::acos, Op::Acos(self.id))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.unary(|x| x.clamp(lo, hi), Op::Clamp { x: self.id, lo, hi })
    }

    pub fn abs(self) -> Result<Var<'t>> {
        self.unary(f64::abs, Op::Abs(self.id))
    }

    /// Elementwise `max(x, c)`.
    pub fn max_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary(|x| x.max(c), Op::MaxScalar(self.id, c))
    }

    /// Elementwise `min(x, c)`.
    pub fn min_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary(|x| x.min(c), Op::MinScalar(self.id, c))
    }

    fn keep_shape(&self, axes: &[usize], op: &'static str) -> Result<(Vec<usize>, Vec<usize>)> {
        let shape = self.shape();
        let mut keep = shape.clone();
        for &a in axes {
            if a >= shape.len() {
                return Err(NdError::AxisOutOfRange {
                    op,
                    axis: a,
                    rank: shape.len(),
                });
            }
            keep[a] = 1;
        }
        let out: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        Ok((keep, out))
    }

    fn reduce(self, axes: &[usize], mean: bool) -> Result<Var<'t>> {
        let name = if mean { "mean" } else { "sum" };
        let (keep, out_shape) = self.keep_shape(axes, name)?;
        let v = self.value();
        let map = broadcast_index_map(&keep, v.shape());
        let mut data = vec![0.0; numel(&keep)];
        for (i, &m) in map.iter().enumerate() {
            data[m] += v.data()[i];
        }
        let count = v.len() / data.len();
        if mean {
            let inv = 1.0 / count as f64;
            data.iter_mut().for_each(|x| *x *= inv);
            self.record(out_shape, data, Op::Mean { x: self.id, keep, count })
        } else {
            self.record(out_shape, data, Op::Sum { x: self.id, keep })
        }
    }

    /// Sum over the listed axes, which are removed from the shape.
    pub fn sum_axes(self, axes: &[usize]) -> Result<Var<'t>> {
        self.reduce(axes, false)
    }

    /// Mean over the listed axes, which are removed from the shape.
    pub fn mean_axes(self, axes: &[usize]) -> Result<Var<'t>> {
        self.reduce(axes, true)
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(&axes, false)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(&axes, true)
    }

    /// Contiguous window `[start, start + len)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        let shape = v.shape();
        if axis >= shape.len() {
            return Err(NdError::AxisOutOfRange {
                op: "slice",
                axis,
                rank: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(NdError::Invalid(format!(
                "slice [{start}, {}) out of range for extent {}",
                start + len,
                shape[axis]
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src_block = shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let b = o * src_block + start * inner;
            data.extend_from_slice(&v.data()[b..b + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        self.record(out_shape, data, Op::Slice { x: self.id, axis, start })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        if numel(shape) != v.len() {
            return Err(NdError::InvalidShape {
                shape: shape.to_vec(),
                len: v.len(),
            });
        }
        self.record(shape.to_vec(), v.data().to_vec(), Op::Reshape(self.id))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        let rank = v.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(NdError::Invalid(format!("bad permutation {axes:?} for rank {rank}")));
        }
        let map = permute_map(v.shape(), axes);
        let data = map.iter().map(|&i| v.data()[i]).collect();
        let shape = axes.iter().map(|&a| v.shape()[a]).collect();
        self.record(shape, data, Op::Permute { x: self.id, axes: axes.to_vec() })
    }

    /// Batched matrix product over the last two axes. `other` either shares
    /// the leading axes or is a single matrix applied to every batch entry.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let d = matmul_dims(a.shape(), b.shape()).ok_or_else(|| NdError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })?;
        let data = matmul_forward(&d, a.data(), b.data());
        let mut shape = a.shape().to_vec();
        let r = shape.len();
        shape[r - 1] = d.m;
        self.record(shape, data, Op::MatMul(self.id, other.id))
    }

    /// Symmetric zero-padded, stride-1 convolution along time.
    ///
    /// `self` is `[C_in, T]` or `[B, C_in, T]`, `weight` is `[C_out, C_in, K]`
    /// with odd `K`, `bias` is `[C_out]`. Output keeps the temporal length.
    pub fn conv1d(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&weight)?;
        self.same_tape(&bias)?;
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let d = conv::Dims::check(x.shape(), w.shape(), b.shape())?;
        let data = conv::forward(&d, x.data(), w.data(), b.data());
        let mut shape = x.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = d.c_out;
        self.record(
            shape,
            data,
            Op::Conv1d {
                input: self.id,
                weight: weight.id,
                bias: bias.id,
            },
        )
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = *parts
        .first()
        .ok_or_else(|| NdError::Invalid("concat of zero arrays".into()))?;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(NdError::AxisOutOfRange {
            op: "concat",
            axis,
            rank: base.len(),
        });
    }
    let mut total = 0;
    for (p, v) in parts.iter().zip(&values) {
        first.same_tape(p)?;
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(NdError::ShapeMismatch {
                op: "concat",
                lhs: base.clone(),
                rhs: s.to_vec(),
            });
        }
        total += s[axis];
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for v in &values {
            let block = v.shape()[axis] * inner;
            data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
        }
    }
    let mut shape = base;
    shape[axis] = total;
    first.record(
        shape,
        data,
        Op::Concat {
            inputs: parts.iter().map(|p| p.id).collect(),
            axis,
        },
    )
}
