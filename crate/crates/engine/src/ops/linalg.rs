use crate::error::{EngineError, Result};
use crate::graph::{Grads, Graph, Op, Var};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::Tensor;

pub(crate) fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || len + 2 * pad < k {
        return None;
    }
    Some((len + 2 * pad - k) / stride + 1)
}

#[derive(Clone, Copy)]
struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.ci * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `ox` whose input column `ox * stride + kx - pad` is in range.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx { (self.pad - kx).div_ceil(self.stride) } else { 0 };
        let hi = if self.w + self.pad > kx { ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.wo) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Unfolds one image `(ci, h, w)` into `(ci*k*k, ho*wo)`.
    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let p = self.positions();
        for c in 0..self.ci {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_cols(kx);
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        let start = lo * self.stride + kx - self.pad;
                        if self.stride == 1 {
                            line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (i, v) in line[lo..hi].iter_mut().enumerate() {
                                *v = src[start + i * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`], accumulating into `dx`.
    fn col2im_add<T: Real>(&self, col: &[T], dx: &mut [T]) {
        let p = self.positions();
        for c in 0..self.ci {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &col[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_cols(kx);
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let start = lo * self.stride + kx - self.pad;
                        let s = &src[oy * self.wo + lo..oy * self.wo + hi];
                        if self.stride == 1 {
                            line[start..start + hi - lo].iter_mut().zip(s).for_each(|(d, &v)| *d += v);
                        } else {
                            for (i, &v) in s.iter().enumerate() {
                                line[start + i * self.stride] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<(usize, usize, ConvGeom)> {
    if x.len() != 4 || w.len() != 4 || w[2] != w[3] {
        return Err(EngineError::ShapeMismatch { op: "conv2d", lhs: x.to_vec(), rhs: w.to_vec() });
    }
    if x[1] != w[1] {
        return Err(EngineError::ShapeMismatch { op: "conv2d", lhs: x.to_vec(), rhs: w.to_vec() });
    }
    let k = w[2];
    let (Some(ho), Some(wo)) = (conv_out_len(x[2], k, stride, pad), conv_out_len(x[3], k, stride, pad)) else {
        return Err(EngineError::InvalidShape {
            op: "conv2d",
            shape: x.to_vec(),
            reason: format!("kernel {k} stride {stride} pad {pad} does not fit"),
        });
    };
    Ok((x[0], w[0], ConvGeom { ci: x[1], h: x[2], w: x[3], k, stride, pad, ho, wo }))
}

impl<T: Real> Graph<T> {
    /// `(m, k) x (k, n) -> (m, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.node_value(a), self.node_value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(EngineError::ShapeMismatch { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(MatRef::row_major(ta.data(), m, k), MatRef::row_major(tb.data(), k, n), T::zero(), &mut out);
        let value = Tensor::from_parts(vec![m, n], out);
        self.push("matmul", value, Op::Matmul { a, b }, &[a, b])
    }

    /// 2-D convolution (cross-correlation) of `x: (B, Ci, H, W)` with
    /// `w: (Co, Ci, k, k)` and optional bias `(Co)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw) = (self.node_value(x), self.node_value(w));
        let (batch, co, geom) = conv_geom(tx.shape(), tw.shape(), stride, pad)?;
        if let Some(b) = b {
            if self.node_value(b).numel() != co {
                return Err(EngineError::ShapeMismatch {
                    op: "conv2d",
                    lhs: tw.shape().to_vec(),
                    rhs: self.node_value(b).shape().to_vec(),
                });
            }
        }
        let (kk, p) = (geom.col_rows(), geom.positions());
        let in_len = geom.ci * geom.h * geom.w;
        let mut out = vec![T::zero(); batch * co * p];
        let mut col = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * p] };
        let wmat = MatRef::row_major(tw.data(), co, kk);
        for bi in 0..batch {
            let xb = &tx.data()[bi * in_len..(bi + 1) * in_len];
            let cols = if geom.is_pointwise() {
                xb
            } else {
                geom.im2col(xb, &mut col);
                &col[..]
            };
            gemm(wmat, MatRef::row_major(cols, kk, p), T::zero(), &mut out[bi * co * p..(bi + 1) * co * p]);
        }
        if let Some(b) = b {
            let bias = self.node_value(b).data();
            for chunk in out.chunks_mut(p).enumerate() {
                let bv = bias[chunk.0 % co];
                chunk.1.iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::from_parts(vec![batch, co, geom.ho, geom.wo], out);
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push("conv2d", value, Op::Conv2d { x, w, b, stride, pad }, &inputs)
    }

    /// Per-channel `k x k` convolution, stride 1, `x: (B, C, H, W)`,
    /// `w: (C, 1, k, k)`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let (tx, tw) = (self.node_value(x), self.node_value(w));
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 4 || sw.len() != 4 || sw[0] != sx[1] || sw[1] != 1 || sw[2] != sw[3] {
            return Err(EngineError::ShapeMismatch { op: "depthwise_conv2d", lhs: sx.to_vec(), rhs: sw.to_vec() });
        }
        let (batch, c, h, wd, k) = (sx[0], sx[1], sx[2], sx[3], sw[2]);
        let (Some(ho), Some(wo)) = (conv_out_len(h, k, 1, pad), conv_out_len(wd, k, 1, pad)) else {
            return Err(EngineError::InvalidShape {
                op: "depthwise_conv2d",
                shape: sx.to_vec(),
                reason: format!("kernel {k} pad {pad} does not fit"),
            });
        };
        let bias = b.map(|b| self.node_value(b).data());
        if let Some(bias) = bias {
            if bias.len() != c {
                return Err(EngineError::ShapeMismatch { op: "depthwise_conv2d", lhs: sw.to_vec(), rhs: vec![bias.len()] });
            }
        }
        let mut out = vec![T::zero(); batch * c * ho * wo];
        let (xd, wdat) = (tx.data(), tw.data());
        for bi in 0..batch {
            for ch in 0..c {
                let plane = &xd[(bi * c + ch) * h * wd..(bi * c + ch + 1) * h * wd];
                let kern = &wdat[ch * k * k..(ch + 1) * k * k];
                let dst = &mut out[(bi * c + ch) * ho * wo..(bi * c + ch + 1) * ho * wo];
                let b0 = bias.map_or(T::zero(), |bb| bb[ch]);
                dst.iter_mut().for_each(|v| *v = b0);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = kern[ky * k + kx];
                        for oy in 0..ho {
                            let iy = (oy + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * wd..(iy as usize + 1) * wd];
                            let line = &mut dst[oy * wo..(oy + 1) * wo];
                            for (ox, v) in line.iter_mut().enumerate() {
                                let ix = (ox + kx) as isize - pad as isize;
                                if ix >= 0 && ix < wd as isize {
                                    *v += wv * src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![batch, c, ho, wo], out);
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push("depthwise_conv2d", value, Op::Depthwise { x, w, b, pad }, &inputs)
    }
}

pub(crate) fn matmul_backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, (va, vb): (Var, Var), g: &[T], grads: &mut Grads<'_, T>) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let gm = MatRef::row_major(g, m, n);
    grads.with(va, |ga| gemm(gm, MatRef::row_major(b.data(), k, n).t(), T::one(), ga));
    grads.with(vb, |gb| gemm(MatRef::row_major(a.data(), m, k).t(), gm, T::one(), gb));
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    (vx, vw, vb): (Var, Var, Option<Var>),
    stride: usize,
    pad: usize,
    g: &[T],
    grads: &mut Grads<'_, T>,
) {
    let (batch, co, geom) = conv_geom(x.shape(), w.shape(), stride, pad).expect("validated in forward");
    let (kk, p) = (geom.col_rows(), geom.positions());
    let in_len = geom.ci * geom.h * geom.w;
    let wmat = MatRef::row_major(w.data(), co, kk);
    let need_w = grads.wants(vw);
    let need_x = grads.wants(vx);
    let mut col = if geom.is_pointwise() || !need_w { Vec::new() } else { vec![T::zero(); kk * p] };
    let mut dcol = if geom.is_pointwise() || !need_x { Vec::new() } else { vec![T::zero(); kk * p] };
    for bi in 0..batch {
        let gb = MatRef::row_major(&g[bi * co * p..(bi + 1) * co * p], co, p);
        let xb = &x.data()[bi * in_len..(bi + 1) * in_len];
        if need_w {
            let cols = if geom.is_pointwise() {
                xb
            } else {
                geom.im2col(xb, &mut col);
                &col[..]
            };
            grads.with(vw, |gw| gemm(gb, MatRef::row_major(cols, kk, p).t(), T::one(), gw));
        }
        if need_x {
            if geom.is_pointwise() {
                grads.with(vx, |gx| gemm(wmat.t(), gb, T::one(), &mut gx[bi * in_len..(bi + 1) * in_len]));
            } else {
                gemm(wmat.t(), gb, T::zero(), &mut dcol);
                grads.with(vx, |gx| geom.col2im_add(&dcol, &mut gx[bi * in_len..(bi + 1) * in_len]));
            }
        }
    }
    if let Some(vb) = vb {
        grads.with(vb, |gbias| {
            for (i, chunk) in g.chunks(p).enumerate() {
                gbias[i % co] += chunk.iter().copied().sum::<T>();
            }
        });
    }
}

pub(crate) fn depthwise_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    (vx, vw, vb): (Var, Var, Option<Var>),
    pad: usize,
    g: &[T],
    grads: &mut Grads<'_, T>,
) {
    let (sx, sw) = (x.shape(), w.shape());
    let (batch, c, h, wd, k) = (sx[0], sx[1], sx[2], sx[3], sw[2]);
    let ho = conv_out_len(h, k, 1, pad).unwrap();
    let wo = conv_out_len(wd, k, 1, pad).unwrap();
    let (xd, wdat) = (x.data(), w.data());
    let mut gw_acc = vec![T::zero(); w.numel()];
    let need_x = grads.wants(vx);
    let mut gx_acc = if need_x { vec![T::zero(); x.numel()] } else { Vec::new() };
    for bi in 0..batch {
        for ch in 0..c {
            let base_in = (bi * c + ch) * h * wd;
            let plane = &xd[base_in..base_in + h * wd];
            let gout = &g[(bi * c + ch) * ho * wo..(bi * c + ch + 1) * ho * wo];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wdat[ch * k * k + ky * k + kx];
                    let mut acc = T::zero();
                    for oy in 0..ho {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = iy as usize * wd;
                        for ox in 0..wo {
                            let ix = (ox + kx) as isize - pad as isize;
                            if ix >= 0 && ix < wd as isize {
                                let gv = gout[oy * wo + ox];
                                acc += gv * plane[row + ix as usize];
                                if need_x {
                                    gx_acc[base_in + row + ix as usize] += gv * wv;
                                }
                            }
                        }
                    }
                    gw_acc[ch * k * k + ky * k + kx] += acc;
                }
            }
        }
    }
    grads.add(vw, gw_acc);
    if need_x {
        grads.add(vx, gx_acc);
    }
    if let Some(vb) = vb {
        grads.with(vb, |gbias| {
            for (i, chunk) in g.chunks(ho * wo).enumerate() {
                gbias[i % c] += chunk.iter().copied().sum::<T>();
            }
        });
    }
}
