//! Sequential selective scan.
//!
//! For every batch entry and channel `d`, with state size `N`:
//!
//! ```text
//! h_t = exp(delta_t[d] * a[d, :]) * h_{t-1} + delta_t[d] * b_t * x_t[d]
//! y_t[d] = <c_t, h_t> + skip[d] * x_t[d]
//! ```
//!
//! `exp(delta * a)` is the state-transition factor and `delta * b` the input
//! gain; `a <= 0` keeps the recurrence stable.

use crate::error::{EngineError, Result};
use crate::graph::{Grads, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    len: usize,
    chans: usize,
    state: usize,
}

fn dims(x: &[usize], delta: &[usize], a: &[usize], b: &[usize], c: &[usize], d: &[usize]) -> Result<Dims> {
    let mismatch = |rhs: &[usize]| EngineError::ShapeMismatch { op: "selective_scan", lhs: x.to_vec(), rhs: rhs.to_vec() };
    if x.len() != 3 {
        return Err(mismatch(x));
    }
    let (batch, len, chans) = (x[0], x[1], x[2]);
    if delta != x {
        return Err(mismatch(delta));
    }
    if a.len() != 2 || a[0] != chans {
        return Err(mismatch(a));
    }
    let state = a[1];
    for s in [b, c] {
        if s != [batch, len, state] {
            return Err(mismatch(s));
        }
    }
    if d != [chans] {
        return Err(mismatch(d));
    }
    Ok(Dims { batch, len, chans, state })
}

impl<T: Real> Graph<T> {
    /// Input-dependent linear recurrence over axis 1 of `x: (B, L, D)`.
    ///
    /// `delta: (B, L, D)` step sizes, `a: (D, N)` continuous-time poles,
    /// `b, c: (B, L, N)` input/output projections, `skip: (D)` feedthrough.
    pub fn selective_scan(&mut self, x: Var, delta: Var, a: Var, b: Var, c: Var, skip: Var) -> Result<Var> {
        let dm = dims(self.shape(x), self.shape(delta), self.shape(a), self.shape(b), self.shape(c), self.shape(skip))?;
        let (xd, dd, ad, bd, cd, sd) = (
            self.node_value(x).data(),
            self.node_value(delta).data(),
            self.node_value(a).data(),
            self.node_value(b).data(),
            self.node_value(c).data(),
            self.node_value(skip).data(),
        );
        let Dims { batch, len, chans, state } = dm;
        let mut out = vec![T::zero(); batch * len * chans];
        let mut h = vec![T::zero(); chans * state];
        for bi in 0..batch {
            h.iter_mut().for_each(|v| *v = T::zero());
            for t in 0..len {
                let row = (bi * len + t) * chans;
                let bc_row = (bi * len + t) * state;
                let (bt, ct) = (&bd[bc_row..bc_row + state], &cd[bc_row..bc_row + state]);
                for ch in 0..chans {
                    let (dt, xt) = (dd[row + ch], xd[row + ch]);
                    let hs = &mut h[ch * state..(ch + 1) * state];
                    let poles = &ad[ch * state..(ch + 1) * state];
                    let mut y = sd[ch] * xt;
                    for n in 0..state {
                        hs[n] = (dt * poles[n]).exp() * hs[n] + dt * bt[n] * xt;
                        y += ct[n] * hs[n];
                    }
                    out[row + ch] = y;
                }
            }
        }
        let value = Tensor::from_parts(vec![batch, len, chans], out);
        self.push("selective_scan", value, Op::SelectiveScan { x, delta, a, b, c, d: skip }, &[x, delta, a, b, c, skip])
    }
}

pub(crate) struct ScanInputs<'a, T> {
    pub x: &'a Tensor<T>,
    pub delta: &'a Tensor<T>,
    pub a: &'a Tensor<T>,
    pub b: &'a Tensor<T>,
    pub c: &'a Tensor<T>,
    pub d: &'a Tensor<T>,
}

pub(crate) fn selective_scan_backward<T: Real>(inp: ScanInputs<'_, T>, vars: [Var; 6], g: &[T], grads: &mut Grads<'_, T>) {
    let dm = dims(inp.x.shape(), inp.delta.shape(), inp.a.shape(), inp.b.shape(), inp.c.shape(), inp.d.shape())
        .expect("validated in forward");
    let Dims { batch, len, chans, state } = dm;
    let (xd, dd, ad, bd, cd, sd) = (inp.x.data(), inp.delta.data(), inp.a.data(), inp.b.data(), inp.c.data(), inp.d.data());

    let mut gx = vec![T::zero(); xd.len()];
    let mut gdelta = vec![T::zero(); dd.len()];
    let mut ga = vec![T::zero(); ad.len()];
    let mut gb = vec![T::zero(); bd.len()];
    let mut gc = vec![T::zero(); cd.len()];
    let mut gskip = vec![T::zero(); sd.len()];

    let ds = chans * state;
    // hist[t] holds h_{t-1}; decay[t] holds exp(delta_t * a)
    let mut hist = vec![T::zero(); (len + 1) * ds];
    let mut decay = vec![T::zero(); len * ds];
    let mut dh = vec![T::zero(); ds];

    for bi in 0..batch {
        for t in 0..len {
            let row = (bi * len + t) * chans;
            let bt = &bd[(bi * len + t) * state..(bi * len + t + 1) * state];
            let (prev, next) = hist.split_at_mut((t + 1) * ds);
            let prev = &prev[t * ds..];
            let next = &mut next[..ds];
            for ch in 0..chans {
                let (dt, xt) = (dd[row + ch], xd[row + ch]);
                for n in 0..state {
                    let k = ch * state + n;
                    let f = (dt * ad[k]).exp();
                    decay[t * ds + k] = f;
                    next[k] = f * prev[k] + dt * bt[n] * xt;
                }
            }
        }

        dh.iter_mut().for_each(|v| *v = T::zero());
        for t in (0..len).rev() {
            let row = (bi * len + t) * chans;
            let bc_row = (bi * len + t) * state;
            let h_t = &hist[(t + 1) * ds..(t + 2) * ds];
            let h_prev = &hist[t * ds..(t + 1) * ds];
            for ch in 0..chans {
                let gy = g[row + ch];
                let (dt, xt) = (dd[row + ch], xd[row + ch]);
                gx[row + ch] += gy * sd[ch];
                gskip[ch] += gy * xt;
                let mut gdt = T::zero();
                let mut gxt = T::zero();
                for n in 0..state {
                    let k = ch * state + n;
                    let gh = dh[k] + gy * cd[bc_row + n];
                    gc[bc_row + n] += gy * h_t[k];
                    let f = decay[t * ds + k];
                    let gf = gh * h_prev[k] * f;
                    gdt += gf * ad[k] + gh * bd[bc_row + n] * xt;
                    ga[k] += gf * dt;
                    gb[bc_row + n] += gh * dt * xt;
                    gxt += gh * dt * bd[bc_row + n];
                    dh[k] = gh * f;
                }
                gdelta[row + ch] += gdt;
                gx[row + ch] += gxt;
            }
        }
    }

    let [vx, vdelta, va, vb, vc, vd] = vars;
    grads.add(vx, gx);
    grads.add(vdelta, gdelta);
    grads.add(va, ga);
    grads.add(vb, gb);
    grads.add(vc, gc);
    grads.add(vd, gskip);
}
