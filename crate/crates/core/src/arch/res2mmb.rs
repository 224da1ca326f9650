//! Res2Mam multi-scale block: three scales, coarse-to-fine injection, 1x1 fusion.

use spi_engine::{Graph, Real, Var};

use super::layers::{hw, resize, Builder, Conv};
use super::wmb::Wmb;
use super::BlockHyper;
use crate::error::{Result, SpiError};

/// Order in which the scale branches are refined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScaleOrder {
    /// `X3 -> X2 -> X1`, each coarser result injected into the next finer scale.
    #[default]
    CoarseToFine,
    /// `X1 -> X2 -> X3` with the same parameters; only used to probe the dependency.
    FineToCoarse,
}

/// Strided extraction `Conv_s`: one 3x3 conv with stride `s`, or a stride-1
/// conv followed by `s x s` average pooling.
#[derive(Clone, Debug)]
struct Extract {
    conv: Conv,
    pool: usize,
}

impl Extract {
    fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, channels: usize, stride: usize, pooled: bool) -> Result<Self> {
        let (conv_stride, pool) = if pooled { (1, stride) } else { (stride, 1) };
        Ok(Extract { conv: Conv::new(b, name, channels, channels, 3, conv_stride)?, pool })
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        if self.pool > 1 {
            Ok(g.avg_pool(y, self.pool)?)
        } else {
            Ok(y)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Res2Mmb {
    extract: [Extract; 3],
    wmb: [Wmb; 3],
    /// Smoothing convs after bilinear upsampling (into scale 2, into scale 1).
    up: [Conv; 2],
    /// Alignment convs `C_1..C_3` applied at full resolution.
    align: [Conv; 3],
    fuse: Conv,
    pooled: bool,
    pub order: ScaleOrder,
}

impl Res2Mmb {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, hyper: &BlockHyper, windowed: bool) -> Result<Self> {
        let c = hyper.base_channels;
        b.scope(name, |b| {
            let extract = [
                Extract::new(b, "conv1", c, 1, false)?,
                Extract::new(b, "conv2", c, 2, hyper.pooled_downsample)?,
                Extract::new(b, "conv4", c, 4, hyper.pooled_downsample)?,
            ];
            let mut wmb = Vec::with_capacity(3);
            for i in 1..=3 {
                wmb.push(Wmb::new(b, &format!("wmb{i}"), c, hyper.state_dim, hyper.window, windowed, hyper.per_direction_proj)?);
            }
            let up = [Conv::new(b, "up2", c, c, 3, 1)?, Conv::new(b, "up1", c, c, 3, 1)?];
            let align = [Conv::new(b, "align1", c, c, 1, 1)?, Conv::new(b, "align2", c, c, 1, 1)?, Conv::new(b, "align3", c, c, 3, 1)?];
            let fuse = Conv::new(b, "fuse", 3 * c, c, 1, 1)?;
            let wmb: [Wmb; 3] = wmb.try_into().expect("three scales");
            Ok(Res2Mmb { extract, wmb, up, align, fuse, pooled: hyper.pooled_downsample, order: ScaleOrder::default() })
        })
    }

    /// Multi-scale features `X_1, X_2, X_3` at strides 1, 2 and 4.
    pub fn branches<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<[Var; 3]> {
        let (h, w) = hw(g, x);
        if h < 4 || w < 4 {
            return Err(SpiError::SizeMismatch { what: "Res2MMB input", expected: "H, W >= 4".into(), got: format!("{h}x{w}") });
        }
        if self.pooled && (h % 4 != 0 || w % 4 != 0) {
            return Err(SpiError::SizeMismatch { what: "pooled Res2MMB input", expected: "H, W divisible by 4".into(), got: format!("{h}x{w}") });
        }
        Ok([self.extract[0].forward(g, x)?, self.extract[1].forward(g, x)?, self.extract[2].forward(g, x)?])
    }

    fn inject<T: Real>(&self, g: &mut Graph<T>, up: &Conv, from: Var, into: Var) -> Result<Var> {
        let size = hw(g, into);
        let r = resize(g, from, size)?;
        let r = up.forward(g, r)?;
        Ok(g.add(into, r)?)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let [x1, x2, x3] = self.branches(g, x)?;
        let size = hw(g, x);
        let (r1, r2, r3) = match self.order {
            ScaleOrder::CoarseToFine => {
                let r3 = self.wmb[2].forward(g, x3)?;
                let z2 = self.inject(g, &self.up[0], r3, x2)?;
                let r2 = self.wmb[1].forward(g, z2)?;
                let z1 = self.inject(g, &self.up[1], r2, x1)?;
                (self.wmb[0].forward(g, z1)?, r2, r3)
            }
            ScaleOrder::FineToCoarse => {
                let r1 = self.wmb[0].forward(g, x1)?;
                let z2 = self.inject(g, &self.up[0], r1, x2)?;
                let r2 = self.wmb[1].forward(g, z2)?;
                let z3 = self.inject(g, &self.up[1], r2, x3)?;
                (r1, r2, self.wmb[2].forward(g, z3)?)
            }
        };
        let a1 = self.align[0].forward(g, r1)?;
        let u2 = resize(g, r2, size)?;
        let a2 = self.align[1].forward(g, u2)?;
        let u3 = resize(g, r3, size)?;
        let a3 = self.align[2].forward(g, u3)?;
        let cat = g.concat(&[a1, a2, a3], 1)?;
        self.fuse.forward(g, cat)
    }
}
