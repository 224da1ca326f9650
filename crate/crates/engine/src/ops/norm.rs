use crate::error::{EngineError, Result};
use crate::graph::{Grads, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::Tensor;

struct Layout {
    batch: usize,
    channels: usize,
    spatial: usize,
    groups: usize,
}

impl Layout {
    fn group_len(&self) -> usize {
        self.channels / self.groups * self.spatial
    }

    fn group_channels(&self) -> usize {
        self.channels / self.groups
    }
}

/// Mean and `1/sqrt(var + eps)` of every (sample, group).
fn stats<T: Real>(x: &[T], l: &Layout, eps: f64) -> Vec<(T, T)> {
    let n = l.group_len();
    let nt = T::of(n as f64);
    x.chunks(n)
        .map(|chunk| {
            let mean = chunk.iter().copied().sum::<T>() / nt;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            (mean, T::one() / (var + T::of(eps)).sqrt())
        })
        .collect()
}

impl<T: Real> Graph<T> {
    /// Normalises `x: (B, C, ...)` over each of `groups` channel groups,
    /// then applies the per-channel affine `gamma, beta: (C)`.
    ///
    /// `groups = 1` normalises each sample over all its channels and
    /// positions.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let t = self.node_value(x);
        let s = t.shape();
        if s.len() < 2 || groups == 0 || !s[1].is_multiple_of(groups) {
            return Err(EngineError::InvalidShape {
                op: "group_norm",
                shape: s.to_vec(),
                reason: format!("{groups} groups do not divide the channel axis"),
            });
        }
        let l = Layout { batch: s[0], channels: s[1], spatial: s[2..].iter().product(), groups };
        for v in [gamma, beta] {
            if self.node_value(v).numel() != l.channels {
                return Err(EngineError::ShapeMismatch {
                    op: "group_norm",
                    lhs: s.to_vec(),
                    rhs: self.node_value(v).shape().to_vec(),
                });
            }
        }
        let (g, b) = (self.node_value(gamma).data(), self.node_value(beta).data());
        let st = stats(t.data(), &l, eps);
        let mut out = Vec::with_capacity(t.numel());
        let xd = t.data();
        for bi in 0..l.batch {
            for c in 0..l.channels {
                let (mean, inv) = st[bi * l.groups + c / l.group_channels()];
                let base = (bi * l.channels + c) * l.spatial;
                out.extend(xd[base..base + l.spatial].iter().map(|&v| (v - mean) * inv * g[c] + b[c]));
            }
        }
        let value = Tensor::from_parts(s.to_vec(), out);
        self.push("group_norm", value, Op::GroupNorm { x, gamma, beta, groups, eps }, &[x, gamma, beta])
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    (vx, vg, vb): (Var, Var, Var),
    groups: usize,
    eps: f64,
    g: &[T],
    grads: &mut Grads<'_, T>,
) {
    let s = x.shape();
    let l = Layout { batch: s[0], channels: s[1], spatial: s[2..].iter().product(), groups };
    let st = stats(x.data(), &l, eps);
    let (xd, gam) = (x.data(), gamma.data());
    let mut dgamma = vec![T::zero(); l.channels];
    let mut dbeta = vec![T::zero(); l.channels];
    let need_x = grads.wants(vx);
    let mut dx = if need_x { vec![T::zero(); x.numel()] } else { Vec::new() };
    let n = l.group_len();
    let nt = T::of(n as f64);
    let gc = l.group_channels();
    for bi in 0..l.batch {
        for grp in 0..l.groups {
            let (mean, inv) = st[bi * l.groups + grp];
            let start = (bi * l.channels + grp * gc) * l.spatial;
            let (mut sum_d, mut sum_dx) = (T::zero(), T::zero());
            for i in 0..n {
                let c = grp * gc + i / l.spatial;
                let xhat = (xd[start + i] - mean) * inv;
                let gv = g[start + i];
                dgamma[c] += gv * xhat;
                dbeta[c] += gv;
                let d = gv * gam[c];
                sum_d += d;
                sum_dx += d * xhat;
            }
            if need_x {
                let (md, mdx) = (sum_d / nt, sum_dx / nt);
                for i in 0..n {
                    let c = grp * gc + i / l.spatial;
                    let xhat = (xd[start + i] - mean) * inv;
                    dx[start + i] = inv * (g[start + i] * gam[c] - md - xhat * mdx);
                }
            }
        }
    }
    grads.add(vg, dgamma);
    grads.add(vb, dbeta);
    if need_x {
        grads.add(vx, dx);
    }
}
