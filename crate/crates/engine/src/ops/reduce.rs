use crate::error::{EngineError, Result};
use crate::graph::{Grads, Graph, Op, Var};
use crate::ops::elementwise::sign;
use crate::real::Real;
use crate::tensor::Tensor;

/// `(outer, axis_len, inner)` split of a shape around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (shape[..axis].iter().product(), shape[axis], shape[axis + 1..].iter().product())
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() || shape[axis] == 0 {
        return Err(EngineError::InvalidShape { op, shape: shape.to_vec(), reason: format!("bad axis {axis}") });
    }
    Ok(())
}

fn softmax_rows<T: Real>(x: &[T], shape: &[usize], axis: usize, log: bool) -> Vec<T> {
    let (outer, n, inner) = split(shape, axis);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let mut mx = T::neg_infinity();
            for k in 0..n {
                mx = mx.max(x[at(k)]);
            }
            let mut total = T::zero();
            for k in 0..n {
                total += (x[at(k)] - mx).exp();
            }
            let lse = mx + total.ln();
            for k in 0..n {
                let l = x[at(k)] - lse;
                out[at(k)] = if log { l } else { l.exp() };
            }
        }
    }
    out
}

impl<T: Real> Graph<T> {
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.node_value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.node_value(x);
        if t.numel() == 0 {
            return Err(EngineError::InvalidShape { op: "mean", shape: t.shape().to_vec(), reason: "empty".into() });
        }
        let s: T = t.data().iter().copied().sum::<T>() / T::of(t.numel() as f64);
        self.push("mean", Tensor::scalar(s), Op::Mean { x }, &[x])
    }

    /// `sum |x|`.
    pub fn l1_norm(&mut self, x: Var) -> Result<Var> {
        let s: T = self.node_value(x).data().iter().map(|v| v.abs()).sum();
        self.push("l1_norm", Tensor::scalar(s), Op::L1 { x }, &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.node_value(x);
        check_axis("softmax", t.shape(), axis)?;
        let value = Tensor::from_parts(t.shape().to_vec(), softmax_rows(t.data(), t.shape(), axis, false));
        self.push("softmax", value, Op::Softmax { x, axis }, &[x])
    }

    /// `x - logsumexp(x)` along `axis`; finite wherever `x` is.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.node_value(x);
        check_axis("log_softmax", t.shape(), axis)?;
        let value = Tensor::from_parts(t.shape().to_vec(), softmax_rows(t.data(), t.shape(), axis, true));
        self.push("log_softmax", value, Op::LogSoftmax { x, axis }, &[x])
    }
}

pub(crate) fn sum_backward<T: Real>(scale: T, vx: Var, g: &[T], grads: &mut Grads<'_, T>) {
    let gv = g[0] * scale;
    grads.with(vx, |gx| gx.iter_mut().for_each(|v| *v += gv));
}

pub(crate) fn l1_backward<T: Real>(x: &Tensor<T>, vx: Var, g: &[T], grads: &mut Grads<'_, T>) {
    let gv = g[0];
    grads.with(vx, |gx| {
        for (a, &xv) in gx.iter_mut().zip(x.data()) {
            *a += gv * sign(xv);
        }
    });
}

pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, axis: usize, log: bool, vx: Var, g: &[T], grads: &mut Grads<'_, T>) {
    let (outer, n, inner) = split(y.shape(), axis);
    let yd = y.data();
    grads.with(vx, |gx| {
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                if log {
                    let total: T = (0..n).map(|k| g[at(k)]).sum();
                    for k in 0..n {
                        gx[at(k)] += g[at(k)] - yd[at(k)].exp() * total;
                    }
                } else {
                    let dot: T = (0..n).map(|k| g[at(k)] * yd[at(k)]).sum();
                    for k in 0..n {
                        gx[at(k)] += yd[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
        }
    });
}
