//! Training losses, as graph operations and as plain kernels.

use spi_engine::{Graph, Real, Tensor, Var};

use crate::error::Result;

/// Numerically stable softmax of a vector.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `sum_i p_i ln(p_i / q_i)`, with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (p / q).ln()).sum()
}

/// `(1/N) ||a - y||^2` over `N` measurements.
pub fn fidelity_value(predicted: &[f64], y: &[f64]) -> f64 {
    predicted.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Mean absolute value.
pub fn sparsity_value(feat: &[f64]) -> f64 {
    feat.iter().map(|v| v.abs()).sum::<f64>() / feat.len() as f64
}

/// `KL(softmax(y) || softmax(predicted))`.
pub fn proximal_value(predicted: &[f64], y: &[f64]) -> f64 {
    kl_divergence(&softmax(y), &softmax(predicted))
}

/// Measurements and patterns as graph constants for one training run.
#[derive(Clone, Debug)]
pub struct Problem<T> {
    /// `(N_M, N_P)`.
    pub patterns: Tensor<T>,
    /// `(N_M, 1)`.
    pub y: Tensor<T>,
    /// `softmax(y)` as `(N_M, 1)`.
    target_dist: Tensor<T>,
    /// `sum_i P_i ln P_i`.
    neg_entropy: f64,
}

impl<T: Real> Problem<T> {
    pub fn new(patterns: Vec<f64>, n_meas: usize, y: &[f64]) -> Result<Self> {
        let n_pix = patterns.len() / n_meas.max(1);
        let p = softmax(y);
        let neg_entropy = p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum();
        Ok(Problem {
            patterns: Tensor::from_f64(vec![n_meas, n_pix], &patterns)?,
            y: Tensor::from_f64(vec![n_meas, 1], y)?,
            target_dist: Tensor::from_f64(vec![n_meas, 1], &p)?,
            neg_entropy,
        })
    }

    pub fn n_meas(&self) -> usize {
        self.patterns.shape()[0]
    }

    pub fn n_pix(&self) -> usize {
        self.patterns.shape()[1]
    }

    /// Records the constants on `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound { m: g.constant(self.patterns.clone()), y: g.constant(self.y.clone()), p: g.constant(self.target_dist.clone()), neg_entropy: self.neg_entropy }
    }
}

/// [`Problem`] constants recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct Bound {
    m: Var,
    y: Var,
    p: Var,
    neg_entropy: f64,
}

/// `M * vec(image)` as `(N_M, 1)`.
pub fn project<T: Real>(g: &mut Graph<T>, b: &Bound, image: Var) -> Result<Var> {
    let n = g.shape(b.m)[1];
    let v = g.reshape(image, [n, 1])?;
    Ok(g.matmul(b.m, v)?)
}

/// `(1/N_M) ||M * image - Y||^2`.
pub fn fidelity_loss<T: Real>(g: &mut Graph<T>, b: &Bound, image: Var) -> Result<Var> {
    let a = project(g, b, image)?;
    let d = g.sub(a, b.y)?;
    let sq = g.square(d)?;
    Ok(g.mean(sq)?)
}

/// `(1/N) ||feat||_1` with `N` the element count.
pub fn sparsity_loss<T: Real>(g: &mut Graph<T>, feat: Var) -> Result<Var> {
    let n: usize = g.shape(feat).iter().product();
    let l1 = g.l1_norm(feat)?;
    Ok(g.scale(l1, 1.0 / n as f64)?)
}

/// `KL(P || Q)` with `P = softmax(Y)` and `Q = softmax(M * image)`, written as
/// `sum P ln P - sum P ln Q` so that `P` stays a constant.
pub fn proximal_loss<T: Real>(g: &mut Graph<T>, b: &Bound, image: Var) -> Result<Var> {
    let a = project(g, b, image)?;
    let log_q = g.log_softmax(a, 0)?;
    let cross = g.mul(b.p, log_q)?;
    let cross = g.sum(cross)?;
    let neg = g.neg(cross)?;
    Ok(g.add_scalar(neg, b.neg_entropy)?)
}
