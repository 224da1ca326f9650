//! Visual state-space block and its four-direction selective scan (SS2D).

use spi_engine::{Graph, ParamId, Real, Var};

use super::layers::{cached_index, Builder, Conv, DwConv, Norm};
use crate::error::{Result, SpiError};

/// Scan orders over an `H x W` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    RowForward,
    RowBackward,
    ColForward,
    ColBackward,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::RowForward, Direction::RowBackward, Direction::ColForward, Direction::ColBackward];

    /// Flat pixel index visited at step `l`.
    fn pixel(self, l: usize, h: usize, w: usize) -> usize {
        let n = h * w;
        let col_major = |l: usize| (l % h) * w + l / h;
        match self {
            Direction::RowForward => l,
            Direction::RowBackward => n - 1 - l,
            Direction::ColForward => col_major(l),
            Direction::ColBackward => col_major(n - 1 - l),
        }
    }
}

/// Gather table `(B, K, H, W) -> (B, L, K)` in scan order.
pub fn to_sequence_index(b: usize, k: usize, h: usize, w: usize, dir: Direction) -> Vec<usize> {
    let l_len = h * w;
    let mut idx = Vec::with_capacity(b * l_len * k);
    for bi in 0..b {
        for l in 0..l_len {
            let p = dir.pixel(l, h, w);
            for ch in 0..k {
                idx.push((bi * k + ch) * l_len + p);
            }
        }
    }
    idx
}

/// Gather table `(B, L, K) -> (B, K, H, W)`, inverse of [`to_sequence_index`].
pub fn from_sequence_index(b: usize, k: usize, h: usize, w: usize, dir: Direction) -> Vec<usize> {
    let l_len = h * w;
    let mut step_of = vec![0usize; l_len];
    for l in 0..l_len {
        step_of[dir.pixel(l, h, w)] = l;
    }
    let mut idx = Vec::with_capacity(b * k * l_len);
    for bi in 0..b {
        for ch in 0..k {
            for &l in &step_of {
                idx.push((bi * l_len + l) * k + ch);
            }
        }
    }
    idx
}

/// Per-direction scan parameters (as graph values).
pub struct DirParams {
    /// Continuous-time poles `(C, N)`, expected negative.
    pub a: Var,
    /// Feedthrough `(C)`.
    pub skip: Var,
}

/// One directional scan over `stacked = [x | step | b | c]` channels in image
/// layout; `step` maps the gathered step channels to `(delta, params)`.
fn scan_direction<T: Real>(
    g: &mut Graph<T>,
    stacked: Var,
    dir: Direction,
    (ch, n): (usize, usize),
    step: impl FnOnce(&mut Graph<T>, Var) -> Result<(Var, DirParams)>,
) -> Result<Var> {
    let s = g.shape(stacked).to_vec();
    let (bsz, k, h, w) = (s[0], s[1], s[2], s[3]);
    let to_seq = cached_index("to_seq", [bsz, k, h, w, dir as usize], || to_sequence_index(bsz, k, h, w, dir));
    let seq = g.gather(stacked, to_seq, [bsz, h * w, k])?;
    let xs = g.slice(seq, 2, 0, ch)?;
    let steps = g.slice(seq, 2, ch, ch)?;
    let bs = g.slice(seq, 2, 2 * ch, n)?;
    let cs = g.slice(seq, 2, 2 * ch + n, n)?;
    let (delta, p) = step(g, steps)?;
    let ys = g.selective_scan(xs, delta, p.a, bs, cs, p.skip)?;
    let from_seq = cached_index("from_seq", [bsz, ch, h, w, dir as usize], || from_sequence_index(bsz, ch, h, w, dir));
    Ok(g.gather(ys, from_seq, [bsz, ch, h, w])?)
}

fn accumulate<T: Real>(g: &mut Graph<T>, total: Option<Var>, v: Var) -> Result<Option<Var>> {
    Ok(Some(match total {
        None => v,
        Some(t) => g.add(t, v)?,
    }))
}

/// Runs the selective scan in all four directions and sums the results.
///
/// `x, delta: (B, C, H, W)` and `b, c: (B, N, H, W)` are in image layout.
pub fn directional_scan_sum<T: Real>(g: &mut Graph<T>, x: Var, delta: Var, b: Var, c: Var, dirs: [DirParams; 4]) -> Result<Var> {
    let (ch, n) = (g.shape(x)[1], g.shape(b)[1]);
    let stacked = g.concat(&[x, delta, b, c], 1)?;
    let mut total = None;
    for (dir, p) in Direction::ALL.into_iter().zip(dirs) {
        let y = scan_direction(g, stacked, dir, (ch, n), |_, d| Ok((d, p)))?;
        total = accumulate(g, total, y)?;
    }
    Ok(total.expect("four directions"))
}

#[derive(Clone, Debug)]
struct DirState {
    a_log: ParamId,
    skip: ParamId,
    dt_bias: ParamId,
}

/// SS2D: one shared projection to step sizes and input/output gains, with
/// independent poles, feedthrough and step bias per direction.
#[derive(Clone, Debug)]
pub struct Ss2d {
    channels: usize,
    state: usize,
    /// Shared `C -> C + 2N` projection (or one per direction).
    proj: Vec<Conv>,
    dirs: Vec<DirState>,
}

impl Ss2d {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, channels: usize, state: usize, per_direction_proj: bool) -> Result<Self> {
        b.scope(name, |b| {
            let n_proj = if per_direction_proj { 4 } else { 1 };
            let proj = (0..n_proj).map(|i| Conv::new(b, &format!("x_proj{i}"), channels, channels + 2 * state, 1, 1)).collect::<Result<_>>()?;
            let mut dirs = Vec::new();
            for (i, _) in Direction::ALL.iter().enumerate() {
                let st = b.scope(&format!("dir{i}"), |b| {
                    // log-spaced poles -1 .. -N
                    let a_log: Vec<f64> = (0..channels * state)
                        .map(|k| {
                            let j = k % state;
                            if state == 1 {
                                0.0
                            } else {
                                (state as f64).ln() * j as f64 / (state - 1) as f64
                            }
                        })
                        .collect();
                    let a_log = b.values("a_log", &[channels, state], a_log)?;
                    let skip = b.constant("skip", &[channels], 1.0)?;
                    // softplus^-1 of step sizes log-uniform in [1e-3, 1e-1]
                    let dt: Vec<f64> = (0..channels)
                        .map(|_| {
                            use rand::Rng;
                            let u: f64 = b.rng().gen();
                            (1e-3f64.ln() + u * (1e-1f64.ln() - 1e-3f64.ln())).exp()
                        })
                        .collect();
                    let dt_bias = b.values("dt_bias", &[channels], dt.iter().map(|d| d + (-(-d).exp_m1()).ln()).collect())?;
                    Ok::<_, SpiError>(DirState { a_log, skip, dt_bias })
                })?;
                dirs.push(st);
            }
            Ok(Ss2d { channels, state, proj, dirs })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, u: Var) -> Result<Var> {
        let dims = (self.channels, self.state);
        let mut shared: Option<Var> = None;
        let mut total = None;
        for (i, dir) in Direction::ALL.into_iter().enumerate() {
            let stacked = match shared {
                Some(s) if self.proj.len() == 1 => s,
                _ => {
                    let p = self.proj[i % self.proj.len()].forward(g, u)?;
                    let s = g.concat(&[u, p], 1)?;
                    shared = Some(s);
                    s
                }
            };
            let y = scan_direction(g, stacked, dir, dims, |g, dt| self.dir_params(g, i, dt))?;
            total = accumulate(g, total, y)?;
        }
        Ok(total.expect("four directions"))
    }

    /// `delta = softplus(dt + bias)` and `a = -exp(a_log)` for direction `i`.
    fn dir_params<T: Real>(&self, g: &mut Graph<T>, i: usize, dt: Var) -> Result<(Var, DirParams)> {
        let st = &self.dirs[i];
        let bias = g.param(st.dt_bias);
        let z = g.add(dt, bias)?;
        let delta = g.softplus(z, 1.0)?;
        let a_log = g.param(st.a_log);
        let e = g.exp(a_log)?;
        let a = g.neg(e)?;
        Ok((delta, DirParams { a, skip: g.param(st.skip) }))
    }
}

/// `x + out_proj(SS2D(silu(dw(in_proj(n)))) * silu(gate_proj(n)))` with
/// `n = norm(x)`.
#[derive(Clone, Debug)]
pub struct Vssb {
    pub norm: Norm,
    pub in_proj: Conv,
    pub dw: DwConv,
    pub ss2d: Ss2d,
    pub gate_proj: Conv,
    pub out_proj: Conv,
    channels: usize,
}

impl Vssb {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, channels: usize, state: usize, per_direction_proj: bool) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Vssb {
                norm: Norm::new(b, "norm", channels)?,
                in_proj: Conv::new(b, "in_proj", channels, channels, 1, 1)?,
                dw: DwConv::new(b, "dw", channels)?,
                ss2d: Ss2d::new(b, "ss2d", channels, state, per_direction_proj)?,
                gate_proj: Conv::new(b, "gate_proj", channels, channels, 1, 1)?,
                out_proj: Conv::new(b, "out_proj", channels, channels, 1, 1)?,
                channels,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != self.channels {
            return Err(SpiError::SizeMismatch { what: "VSSB input channels", expected: self.channels.to_string(), got: format!("{s:?}") });
        }
        let n = self.norm.forward(g, x)?;
        let u = self.in_proj.forward(g, n)?;
        let u = self.dw.forward(g, u)?;
        let u = g.silu(u)?;
        let s = self.ss2d.forward(g, u)?;
        let gate = self.gate_proj.forward(g, n)?;
        let gate = g.silu(gate)?;
        let m = g.mul(s, gate)?;
        let o = self.out_proj.forward(g, m)?;
        Ok(g.add(x, o)?)
    }
}
