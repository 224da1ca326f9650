use std::rc::Rc;

use crate::error::{EngineError, Result};
use crate::graph::{Grads, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Marks a gathered position that reads zero instead of an input element.
pub const ZERO_INDEX: usize = usize::MAX;

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Source-index table of `permute(shape, axes)`.
pub fn permute_index(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let strides = row_major_strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let n = numel(shape);
    let mut index = Vec::with_capacity(n);
    let mut idx = vec![0usize; axes.len()];
    for _ in 0..n {
        index.push(idx.iter().zip(axes).map(|(&i, &a)| i * strides[a]).sum());
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    index
}

/// Bilinear tap table for resizing `n_in -> n_out`, half-pixel centres.
pub(crate) fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<T: Real> Graph<T> {
    /// `out[i] = x[index[i]]`, or zero where `index[i] == ZERO_INDEX`.
    ///
    /// Covers transposes, permutations, slicing, padding and window
    /// partitioning; the backward pass scatters gradients back.
    pub fn gather(&mut self, x: Var, index: impl Into<Rc<[usize]>>, out_shape: impl Into<Vec<usize>>) -> Result<Var> {
        let index: Rc<[usize]> = index.into();
        let out_shape = out_shape.into();
        let t = self.node_value(x);
        if numel(&out_shape) != index.len() {
            return Err(EngineError::InvalidShape {
                op: "gather",
                shape: out_shape,
                reason: format!("index table has {} entries", index.len()),
            });
        }
        let src = t.data();
        if let Some(&bad) = index.iter().find(|&&i| i != ZERO_INDEX && i >= src.len()) {
            return Err(EngineError::InvalidArgument(format!("gather: index {bad} out of range for {:?}", t.shape())));
        }
        let data = index.iter().map(|&i| if i == ZERO_INDEX { T::zero() } else { src[i] }).collect();
        let value = Tensor::from_parts(out_shape, data);
        self.push("gather", value, Op::Gather { x, index }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let t = self.node_value(x);
        if numel(&shape) != t.numel() {
            return Err(EngineError::ShapeMismatch { op: "reshape", lhs: t.shape().to_vec(), rhs: shape });
        }
        let value = Tensor::from_parts(shape, t.data().to_vec());
        self.push("reshape", value, Op::Reshape { x }, &[x])
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(EngineError::InvalidArgument(format!("permute: axes {axes:?} invalid for {shape:?}")));
        }
        let out: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        self.gather(x, permute_index(&shape, axes), out)
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(EngineError::InvalidShape {
                op: "transpose",
                shape: self.shape(x).to_vec(),
                reason: "expected a matrix".into(),
            });
        }
        self.permute(x, &[1, 0])
    }

    /// Keeps `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(EngineError::InvalidShape {
                op: "slice",
                shape,
                reason: format!("axis {axis} range {start}..{}", start + len),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for a in start..start + len {
                let base = (o * shape[axis] + a) * inner;
                index.extend(base..base + inner);
            }
        }
        let mut out = shape.clone();
        out[axis] = len;
        self.gather(x, index, out)
    }

    /// Zero-pads (or crops, for negative amounts) the last two axes.
    pub fn pad2d(&mut self, x: Var, top: isize, bottom: isize, left: isize, right: isize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let nd = shape.len();
        if nd < 2 {
            return Err(EngineError::InvalidShape { op: "pad2d", shape, reason: "needs at least 2 axes".into() });
        }
        let (h, w) = (shape[nd - 2] as isize, shape[nd - 1] as isize);
        let (ho, wo) = (h + top + bottom, w + left + right);
        if ho <= 0 || wo <= 0 {
            return Err(EngineError::InvalidShape { op: "pad2d", shape, reason: "padding removes the whole plane".into() });
        }
        let planes: usize = shape[..nd - 2].iter().product();
        let mut index = Vec::with_capacity(planes * (ho * wo) as usize);
        for p in 0..planes {
            for oy in 0..ho {
                let iy = oy - top;
                for ox in 0..wo {
                    let ix = ox - left;
                    index.push(if iy < 0 || iy >= h || ix < 0 || ix >= w {
                        ZERO_INDEX
                    } else {
                        p * (h * w) as usize + (iy * w + ix) as usize
                    });
                }
            }
        }
        let mut out = shape;
        out[nd - 2] = ho as usize;
        out[nd - 1] = wo as usize;
        self.gather(x, index, out)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(EngineError::InvalidArgument("concat: no inputs".into()));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(EngineError::InvalidShape { op: "concat", shape: base, reason: format!("no axis {axis}") });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(EngineError::ShapeMismatch { op: "concat", lhs: base, rhs: s.to_vec() });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.node_value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut out = base;
        out[axis] = total;
        let value = Tensor::from_parts(out, data);
        self.push("concat", value, Op::Concat { inputs: inputs.to_vec(), axis }, inputs)
    }

    /// Bilinear resize of the last two axes of `(B, C, H, W)` to `(out_h, out_w)`.
    pub fn bilinear_upsample(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let t = self.node_value(x);
        let s = t.shape();
        if s.len() != 4 || out_h == 0 || out_w == 0 || s[2] == 0 || s[3] == 0 {
            return Err(EngineError::InvalidShape {
                op: "bilinear_upsample",
                shape: s.to_vec(),
                reason: format!("cannot resize to {out_h}x{out_w}"),
            });
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ty, tx) = (bilinear_taps(h, out_h), bilinear_taps(w, out_w));
        let src = t.data();
        let mut out = Vec::with_capacity(planes * out_h * out_w);
        for p in 0..planes {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for &(y0, y1, fy) in &ty {
                let fy = T::of(fy);
                for &(x0, x1, fx) in &tx {
                    let fx = T::of(fx);
                    let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                    out.push(top * (T::one() - fy) + bot * fy);
                }
            }
        }
        let value = Tensor::from_parts(vec![s[0], s[1], out_h, out_w], out);
        self.push("bilinear_upsample", value, Op::Upsample { x }, &[x])
    }

    /// Non-overlapping `k x k` mean pooling with stride `k`.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let t = self.node_value(x);
        let s = t.shape();
        if s.len() != 4 || k == 0 || !s[2].is_multiple_of(k) || !s[3].is_multiple_of(k) {
            return Err(EngineError::InvalidShape {
                op: "avg_pool",
                shape: s.to_vec(),
                reason: format!("spatial size not divisible by {k}"),
            });
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h / k, w / k);
        let inv = T::of(1.0 / (k * k) as f64);
        let src = t.data();
        let mut out = vec![T::zero(); planes * ho * wo];
        for p in 0..planes {
            for y in 0..h {
                for xx in 0..w {
                    out[p * ho * wo + (y / k) * wo + xx / k] += src[p * h * w + y * w + xx] * inv;
                }
            }
        }
        let value = Tensor::from_parts(vec![s[0], s[1], ho, wo], out);
        self.push("avg_pool", value, Op::AvgPool { x, k }, &[x])
    }
}

pub(crate) fn gather_backward<T: Real>(index: &[usize], vx: Var, g: &[T], grads: &mut Grads<'_, T>) {
    grads.with(vx, |gx| {
        for (&i, &gv) in index.iter().zip(g) {
            if i != ZERO_INDEX {
                gx[i] += gv;
            }
        }
    });
}

pub(crate) fn concat_backward<T: Real>(
    shapes: &[Vec<usize>],
    inputs: &[Var],
    axis: usize,
    g: &[T],
    grads: &mut Grads<'_, T>,
) {
    let base = &shapes[0];
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let total: usize = shapes.iter().map(|s| s[axis]).sum();
    let mut offset = 0;
    for (s, &v) in shapes.iter().zip(inputs) {
        let chunk = s[axis] * inner;
        grads.with(v, |gv| {
            for o in 0..outer {
                let src = &g[o * total * inner + offset..o * total * inner + offset + chunk];
                for (a, &b) in gv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                    *a += b;
                }
            }
        });
        offset += chunk;
    }
}

pub(crate) fn upsample_backward<T: Real>(in_shape: &[usize], out_shape: &[usize], vx: Var, g: &[T], grads: &mut Grads<'_, T>) {
    let (planes, h, w) = (in_shape[0] * in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let (ty, tx) = (bilinear_taps(h, oh), bilinear_taps(w, ow));
    grads.with(vx, |gx| {
        for p in 0..planes {
            let plane = &mut gx[p * h * w..(p + 1) * h * w];
            let gp = &g[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::of(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::of(fx);
                    let gv = gp[oy * ow + ox];
                    let top = gv * (T::one() - fy);
                    let bot = gv * fy;
                    plane[y0 * w + x0] += top * (T::one() - fx);
                    plane[y0 * w + x1] += top * fx;
                    plane[y1 * w + x0] += bot * (T::one() - fx);
                    plane[y1 * w + x1] += bot * fx;
                }
            }
        }
    });
}

pub(crate) fn avg_pool_backward<T: Real>(in_shape: &[usize], k: usize, vx: Var, g: &[T], grads: &mut Grads<'_, T>) {
    let (planes, h, w) = (in_shape[0] * in_shape[1], in_shape[2], in_shape[3]);
    let (ho, wo) = (h / k, w / k);
    let inv = T::of(1.0 / (k * k) as f64);
    grads.with(vx, |gx| {
        for p in 0..planes {
            for y in 0..h {
                for xx in 0..w {
                    gx[p * h * w + y * w + xx] += g[p * ho * wo + (y / k) * wo + xx / k] * inv;
                }
            }
        }
    });
}
