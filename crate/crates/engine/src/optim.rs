use std::f64::consts::PI;

use crate::error::{EngineError, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

/// Adam with bias correction, one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    pub step_count: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        Self::with_betas(params, lr, Self::DEFAULT_BETA1, Self::DEFAULT_BETA2, Self::DEFAULT_EPS)
    }

    pub fn with_betas(params: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
        AdamState {
            beta1,
            beta2,
            eps,
            lr,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One update of every parameter in `params` from `grads` (same order).
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        let values = params.values_mut();
        if grads.len() != values.len() || self.first_moment.len() != values.len() {
            return Err(EngineError::InvalidArgument(format!(
                "adam: {} parameters, {} gradients, {} moment slots",
                values.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (p, g) in values.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(EngineError::ShapeMismatch { op: "adam_step", lhs: p.shape().to_vec(), rhs: g.shape().to_vec() });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for (i, (p, g)) in values.iter_mut().zip(grads).enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `step == total`.
///
/// `total == 0` returns `lr_max`; steps past `total` stay at `lr_min`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let frac = step.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * frac).cos())
}

/// Global L2 norm over a set of gradients.
pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| {
            let v = v.to_f64_lossless();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
