//! Fidelity networks (Res2MM-Net and the UNet ablation) and the plain conv stack.

use spi_engine::{Graph, Real, Var};

use super::layers::{hw, resize, Builder, Conv};
use super::res2mmb::{Res2Mmb, ScaleOrder};
use super::BlockHyper;
use crate::error::Result;

/// `t = conv(x); s = x + Res2MMB(t); s + conv(silu(conv(s)))`.
#[derive(Clone, Debug)]
pub struct MamCnn {
    pub conv_in: Conv,
    pub res2mmb: Res2Mmb,
    pub conv1: Conv,
    pub conv2: Conv,
}

impl MamCnn {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, hyper: &BlockHyper, windowed: bool) -> Result<Self> {
        let c = hyper.base_channels;
        b.scope(name, |b| {
            Ok(MamCnn {
                conv_in: Conv::new(b, "conv_in", c, c, 3, 1)?,
                res2mmb: Res2Mmb::new(b, "res2mmb", hyper, windowed)?,
                conv1: Conv::new(b, "conv1", c, c, 3, 1)?,
                conv2: Conv::new(b, "conv2", c, c, 3, 1)?,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let t = self.conv_in.forward(g, x)?;
        let m = self.res2mmb.forward(g, t)?;
        let s = g.add(x, m)?;
        let r = self.conv1.forward(g, s)?;
        let r = g.silu(r)?;
        let r = self.conv2.forward(g, r)?;
        Ok(g.add(s, r)?)
    }
}

/// Head (two 3x3 convs), `N` MamCNN blocks with a skip over the body, and a
/// sigmoid tail (two 3x3 convs).
#[derive(Clone, Debug)]
pub struct Res2MmNet {
    pub head: [Conv; 2],
    pub blocks: Vec<MamCnn>,
    pub tail: [Conv; 2],
}

impl Res2MmNet {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, hyper: &BlockHyper, windowed: bool) -> Result<Self> {
        let c = hyper.base_channels;
        b.scope(name, |b| {
            let head = [Conv::new(b, "head0", 1, c, 3, 1)?, Conv::new(b, "head1", c, c, 3, 1)?];
            let blocks = (0..hyper.n_mamcnn).map(|i| MamCnn::new(b, &format!("block{i}"), hyper, windowed)).collect::<Result<_>>()?;
            let tail = [Conv::new(b, "tail0", c, c, 3, 1)?, Conv::new(b, "tail1", c, 1, 3, 1)?];
            Ok(Res2MmNet { head, blocks, tail })
        })
    }

    pub fn head<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.head[0].forward(g, x)?;
        let h = g.silu(h)?;
        self.head[1].forward(g, h)
    }

    /// Head output after the MamCNN chain and the long skip, before the tail.
    pub fn forward_trunk<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.head(g, x)?;
        let mut f = h;
        for block in &self.blocks {
            f = block.forward(g, f)?;
        }
        Ok(g.add(f, h)?)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let f = self.forward_trunk(g, x)?;
        let t = self.tail[0].forward(g, f)?;
        let t = g.silu(t)?;
        let t = self.tail[1].forward(g, t)?;
        Ok(g.sigmoid(t)?)
    }

    pub fn set_scale_order(&mut self, order: ScaleOrder) {
        self.blocks.iter_mut().for_each(|b| b.res2mmb.order = order);
    }
}

fn conv_silu<T: Real>(g: &mut Graph<T>, conv: &Conv, x: Var) -> Result<Var> {
    let y = conv.forward(g, x)?;
    Ok(g.silu(y)?)
}

/// Three-level conv encoder-decoder with skip connections.
#[derive(Clone, Debug)]
pub struct Unet {
    enc: [[Conv; 2]; 3],
    up: [Conv; 2],
    dec: [Conv; 2],
    tail: Conv,
}

impl Unet {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let c = channels;
        b.scope(name, |b| {
            Ok(Unet {
                enc: [
                    [Conv::new(b, "enc0a", 1, c, 3, 1)?, Conv::new(b, "enc0b", c, c, 3, 1)?],
                    [Conv::new(b, "enc1a", c, 2 * c, 3, 2)?, Conv::new(b, "enc1b", 2 * c, 2 * c, 3, 1)?],
                    [Conv::new(b, "enc2a", 2 * c, 4 * c, 3, 2)?, Conv::new(b, "enc2b", 4 * c, 4 * c, 3, 1)?],
                ],
                up: [Conv::new(b, "up1", 4 * c, 2 * c, 3, 1)?, Conv::new(b, "up0", 2 * c, c, 3, 1)?],
                dec: [Conv::new(b, "dec1", 4 * c, 2 * c, 3, 1)?, Conv::new(b, "dec0", 2 * c, c, 3, 1)?],
                tail: Conv::new(b, "tail", c, 1, 3, 1)?,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut skips = Vec::with_capacity(3);
        let mut h = x;
        for [a, b] in &self.enc {
            h = conv_silu(g, a, h)?;
            h = conv_silu(g, b, h)?;
            skips.push(h);
        }
        let mut h = skips.pop().expect("bottleneck");
        for (up, dec) in self.up.iter().zip(&self.dec) {
            let skip = skips.pop().expect("skip per level");
            let size = hw(g, skip);
            let u = resize(g, h, size)?;
            let u = conv_silu(g, up, u)?;
            let cat = g.concat(&[u, skip], 1)?;
            h = conv_silu(g, dec, cat)?;
        }
        let t = self.tail.forward(g, h)?;
        Ok(g.sigmoid(t)?)
    }
}

/// The fidelity module `F(I) -> O_F`.
#[derive(Clone, Debug)]
pub enum Fidelity {
    Res2Mm(Res2MmNet),
    Unet(Unet),
}

impl Fidelity {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self {
            Fidelity::Res2Mm(n) => n.forward(g, x),
            Fidelity::Unet(n) => n.forward(g, x),
        }
    }
}

/// Residual units `x + silu(conv(x))`: `n3` with 3x3 kernels then `n1` with
/// 1x1 kernels. Stands in for a window block at a matched parameter count.
#[derive(Clone, Debug)]
pub struct ConvStack {
    pub units: Vec<Conv>,
}

impl ConvStack {
    /// Unit counts whose parameter total is closest to `target` for `channels`.
    pub fn matched_counts(target: usize, channels: usize) -> (usize, usize) {
        let p3 = 9 * channels * channels + channels;
        let p1 = channels * channels + channels;
        let n3 = target / p3;
        let rem = target - n3 * p3;
        (n3, (rem + p1 / 2) / p1)
    }

    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, channels: usize, n3: usize, n1: usize) -> Result<Self> {
        b.scope(name, |b| {
            let mut units = Vec::with_capacity(n3 + n1);
            for i in 0..n3 + n1 {
                let k = if i < n3 { 3 } else { 1 };
                units.push(Conv::new(b, &format!("unit{i}"), channels, channels, k, 1)?);
            }
            Ok(ConvStack { units })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for u in &self.units {
            let r = conv_silu(g, u, h)?;
            h = g.add(h, r)?;
        }
        Ok(h)
    }
}
