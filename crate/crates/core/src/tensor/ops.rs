use super::linalg::{cholesky_backward, gemm, pairwise_sq_dist_backward};
use super::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(super) enum Op {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar,
    Exp,
    Log,
    Relu,
    Sigmoid,
    Square,
    Clamp { lo: f64, hi: f64 },
    Sum,
    SumAxis { axis: usize },
    Trace,
    Diag,
    Transpose,
    Narrow { axis: usize, start: usize },
    Reshape,
    Cholesky,
    PairwiseSqDist,
}

impl Op {
    pub(super) fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Square => "square",
            Op::Clamp { .. } => "clamp",
            Op::Sum => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::Trace => "trace",
            Op::Diag => "diag",
            Op::Transpose => "transpose",
            Op::Narrow { .. } => "narrow",
            Op::Reshape => "reshape",
            Op::Cholesky => "cholesky",
            Op::PairwiseSqDist => "pairwise_sq_dist",
        }
    }

    /// Vector-Jacobian products for each parent; `None` where the parent
    /// does not require gradients.
    pub(super) fn backward(
        &self,
        parents: &[Tensor],
        out: &Tensor,
        g: &[f64],
    ) -> Result<Vec<Option<Vec<f64>>>> {
        let want = |i: usize| parents[i].requires_grad();
        let unary = |f: &dyn Fn(usize) -> f64| -> Vec<Option<Vec<f64>>> {
            vec![Some((0..g.len()).map(f).collect())]
        };
        let grads = match *self {
            Op::MatMul => {
                let (a, b) = (&parents[0], &parents[1]);
                let (m, n, p) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let ga = want(0).then(|| {
                    let mut out = vec![0.0; m * n];
                    // g[m×p] · bᵀ[p×n]
                    gemm(m, p, n, g, (p, 1), b.data(), (1, p), &mut out);
                    out
                });
                let gb = want(1).then(|| {
                    let mut out = vec![0.0; n * p];
                    // aᵀ[n×m] · g[m×p]
                    gemm(n, m, p, a.data(), (1, n), g, (p, 1), &mut out);
                    out
                });
                vec![ga, gb]
            }
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                let (a, b) = (parents[0].data(), parents[1].data());
                let n = g.len();
                let (an, bn) = (a.len(), b.len());
                let av = |i: usize| a[i % an];
                let bv = |i: usize| b[i % bn];
                let fold = |len: usize, f: &dyn Fn(usize) -> f64| {
                    let mut acc = vec![0.0; len];
                    for i in 0..n {
                        acc[i % len] += f(i);
                    }
                    acc
                };
                let (da, db): (Box<dyn Fn(usize) -> f64>, Box<dyn Fn(usize) -> f64>) = match self {
                    Op::Add => (Box::new(|i| g[i]), Box::new(|i| g[i])),
                    Op::Sub => (Box::new(|i| g[i]), Box::new(|i| -g[i])),
                    Op::Mul => (Box::new(|i| g[i] * bv(i)), Box::new(|i| g[i] * av(i))),
                    _ => (
                        Box::new(|i| g[i] / bv(i)),
                        Box::new(|i| -g[i] * av(i) / (bv(i) * bv(i))),
                    ),
                };
                vec![want(0).then(|| fold(an, &*da)), want(1).then(|| fold(bn, &*db))]
            }
            Op::Scale(c) => unary(&|i| c * g[i]),
            Op::AddScalar | Op::Reshape => vec![Some(g.to_vec())],
            Op::Exp => {
                let y = out.data();
                unary(&|i| g[i] * y[i])
            }
            Op::Log => {
                let x = parents[0].data();
                unary(&|i| g[i] / x[i])
            }
            Op::Relu => {
                let x = parents[0].data();
                unary(&|i| if x[i] > 0.0 { g[i] } else { 0.0 })
            }
            Op::Sigmoid => {
                let y = out.data();
                unary(&|i| g[i] * y[i] * (1.0 - y[i]))
            }
            Op::Square => {
                let x = parents[0].data();
                unary(&|i| 2.0 * x[i] * g[i])
            }
            Op::Clamp { lo, hi } => {
                let x = parents[0].data();
                unary(&|i| if x[i] >= lo && x[i] <= hi { g[i] } else { 0.0 })
            }
            Op::Sum => vec![Some(vec![g[0]; parents[0].numel()])],
            Op::SumAxis { axis } => {
                let (outer, len, inner) = split_axis(parents[0].shape(), axis);
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let dst = (o * len + l) * inner;
                        gx[dst..dst + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            }
            Op::Trace => {
                let k = parents[0].shape()[0];
                let mut gx = vec![0.0; k * k];
                for i in 0..k {
                    gx[i * k + i] = g[0];
                }
                vec![Some(gx)]
            }
            Op::Diag => {
                let k = parents[0].shape()[0];
                let mut gx = vec![0.0; k * k];
                for i in 0..k {
                    gx[i * k + i] = g[i];
                }
                vec![Some(gx)]
            }
            Op::Transpose => {
                let (r, c) = (parents[0].shape()[0], parents[0].shape()[1]);
                // g has shape [c, r]
                vec![Some(transpose_data(g, c, r))]
            }
            Op::Narrow { axis, start } => {
                let (outer, len, inner) = split_axis(parents[0].shape(), axis);
                let taken = out.shape()[axis];
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = o * taken * inner;
                    let dst = (o * len + start) * inner;
                    gx[dst..dst + taken * inner].copy_from_slice(&g[src..src + taken * inner]);
                }
                vec![Some(gx)]
            }
            Op::Cholesky => {
                let k = out.shape()[0];
                vec![Some(cholesky_backward(out.data(), g, k))]
            }
            Op::PairwiseSqDist => {
                let (gx, gy) = pairwise_sq_dist_backward(&parents[0], &parents[1], g);
                vec![want(0).then_some(gx), want(1).then_some(gy)]
            }
        };
        Ok(grads)
    }
}

/// `(outer, axis_len, inner)` such that a row-major index decomposes as
/// `(o * axis_len + a) * inner + i`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(super) fn transpose_data(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = data[i * cols + j];
        }
    }
    t
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    fn require_matrix(&self, what: &str) -> Result<(usize, usize)> {
        match *self.shape() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(format!(
                "{what} needs a matrix, got shape {:?}",
                self.shape()
            ))),
        }
    }

    fn require_square(&self, what: &str) -> Result<usize> {
        let (r, c) = self.require_matrix(what)?;
        if r != c {
            return Err(Error::dim(format!("{what} needs a square matrix, got {r}×{c}")));
        }
        Ok(r)
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, n) = self.require_matrix("matmul")?;
        let (n2, p) = rhs.require_matrix("matmul")?;
        if n != n2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions disagree: {m}×{n} · {n2}×{p}"
            )));
        }
        let mut out = vec![0.0; m * p];
        gemm(m, n, p, self.data(), (n, 1), rhs.data(), (p, 1), &mut out);
        Tensor::from_op(out, vec![m, p], Op::MatMul, &[self, rhs])
    }

    fn binary(&self, rhs: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), rhs.shape());
        let out_shape = if sa.ends_with(sb) {
            sa
        } else if sb.ends_with(sa) {
            sb
        } else {
            return Err(Error::dim(format!(
                "{}: shapes {sa:?} and {sb:?} do not broadcast over trailing dimensions",
                op.name()
            )));
        };
        let (a, b) = (self.data(), rhs.data());
        let n = numel(out_shape);
        let out = (0..n).map(|i| f(a[i % a.len()], b[i % b.len()])).collect();
        Tensor::from_op(out, out_shape.to_vec(), op, &[self, rhs])
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, Op::Sub, |a, b| a - b)
    }

    /// Hadamard (elementwise) product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, Op::Div, |a, b| a / b)
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let out = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(out, self.shape().to_vec(), op, &[self])
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.unary(Op::Scale(c), |x| c * x)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.unary(Op::AddScalar, |x| x + c)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(Op::Exp, f64::exp)
    }

    /// Natural log; nonpositive entries are a domain error.
    pub fn log(&self) -> Result<Tensor> {
        if let Some(pos) = self.data().iter().position(|&x| x <= 0.0) {
            return Err(Error::Domain(format!(
                "log of nonpositive value {} at index {pos}",
                self.data()[pos]
            )));
        }
        self.unary(Op::Log, f64::ln)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary(Op::Relu, |x| x.max(0.0))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary(Op::Sigmoid, stable_sigmoid)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.unary(Op::Square, |x| x * x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        self.unary(Op::Clamp { lo, hi }, |x| x.clamp(lo, hi))
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![s], vec![], Op::Sum, &[self])
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::dim("mean of an empty tensor"));
        }
        self.sum()?.scale(1.0 / self.numel() as f64)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::dim(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x[src + i];
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Tensor::from_op(out, shape, Op::SumAxis { axis }, &[self])
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::dim(format!("axis {axis} out of range")))?;
        if len == 0 {
            return Err(Error::dim("mean over an empty axis"));
        }
        self.sum_axis(axis)?.scale(1.0 / len as f64)
    }

    pub fn trace(&self) -> Result<Tensor> {
        let k = self.require_square("trace")?;
        let t = (0..k).map(|i| self.data()[i * k + i]).sum();
        Tensor::from_op(vec![t], vec![], Op::Trace, &[self])
    }

    /// Main diagonal of a square matrix.
    pub fn diag(&self) -> Result<Tensor> {
        let k = self.require_square("diag")?;
        let d = (0..k).map(|i| self.data()[i * k + i]).collect();
        Tensor::from_op(d, vec![k], Op::Diag, &[self])
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.require_matrix("transpose")?;
        Tensor::from_op(transpose_data(self.data(), r, c), vec![c, r], Op::Transpose, &[self])
    }

    /// `len` consecutive slices along `axis`, starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + len > self.shape()[axis] {
            return Err(Error::dim(format!(
                "narrow({axis}, {start}, {len}) out of range for shape {:?}",
                self.shape()
            )));
        }
        let (outer, full, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * full + start) * inner;
            out.extend_from_slice(&x[src..src + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(out, shape, Op::Narrow { axis, start }, &[self])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Tensor::from_op(self.to_vec(), shape.to_vec(), Op::Reshape, &[self])
    }

    pub(super) fn cholesky_node(&self, factor: Vec<f64>, k: usize) -> Result<Tensor> {
        Tensor::from_op(factor, vec![k, k], Op::Cholesky, &[self])
    }

    pub(super) fn pairwise_node(&self, other: &Tensor, d: Vec<f64>, n: usize, m: usize) -> Result<Tensor> {
        Tensor::from_op(d, vec![n, m], Op::PairwiseSqDist, &[self, other])
    }

    pub(super) fn square_dim(&self, what: &str) -> Result<usize> {
        self.require_square(what)
    }

    pub(super) fn matrix_dims(&self, what: &str) -> Result<(usize, usize)> {
        self.require_matrix(what)
    }
}
