//! Proximal branch: sparsity encoder, learnable soft threshold, sparsity decoder.

use spi_engine::{Graph, Real, Var};

use super::layers::{Builder, Conv, ResBlock};
use super::net::ConvStack;
use super::wmb::Wmb;
use super::{BlockHyper, ThresholdBounds};
use crate::error::{Result, SpiError};

/// Initial value of the threshold parameter `alpha`.
pub const ALPHA_INIT: f64 = 0.1;

/// `lambda_min + (lambda_max - lambda_min) * sigmoid(alpha)` on the graph.
pub fn lambda_of<T: Real>(g: &mut Graph<T>, alpha: Var, bounds: &ThresholdBounds) -> Result<Var> {
    let s = g.sigmoid(alpha)?;
    let s = g.scale(s, bounds.lambda_max - bounds.lambda_min)?;
    Ok(g.add_scalar(s, bounds.lambda_min)?)
}

/// `sgn(x) * softplus(|x| - lambda; beta)`, with `sgn` carrying no gradient.
pub fn soft_threshold_smooth<T: Real>(g: &mut Graph<T>, x: Var, lambda: Var, beta: f64) -> Result<Var> {
    let sgn = g.sign(x)?;
    let mag = g.abs(x)?;
    let shifted = g.sub(mag, lambda)?;
    let sp = g.softplus(shifted, beta)?;
    Ok(g.mul(sgn, sp)?)
}

/// The latent-domain mixing block: a window block, or a conv stack in ablation (b).
#[derive(Clone, Debug)]
pub enum Latent {
    Wmb(Wmb),
    Stack(ConvStack),
}

impl Latent {
    fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, hyper: &BlockHyper, windowed: bool, conv_stack: bool) -> Result<Self> {
        let cl = hyper.latent_channels();
        if conv_stack {
            let (n3, n1) = ConvStack::matched_counts(Self::wmb_params(hyper)?, cl);
            Ok(Latent::Stack(ConvStack::new(b, name, cl, n3, n1)?))
        } else {
            Ok(Latent::Wmb(Wmb::new(b, name, cl, hyper.state_dim, hyper.window, windowed, hyper.per_direction_proj)?))
        }
    }

    /// Parameter count of one latent window block.
    pub fn wmb_params(hyper: &BlockHyper) -> Result<usize> {
        let mut scratch = spi_engine::ParamStore::<f32>::new();
        let mut b = Builder::new(&mut scratch, 0);
        Wmb::new(&mut b, "probe", hyper.latent_channels(), hyper.state_dim, hyper.window, true, hyper.per_direction_proj)?;
        Ok(scratch.numel())
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self {
            Latent::Wmb(w) => w.forward(g, x),
            Latent::Stack(s) => s.forward(g, x),
        }
    }
}

/// `WMB(ResSeq(Trans(O_F)))`: a strided conv lifts to `latent_channels` at
/// `1 / downscale` resolution.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub trans: [Conv; 2],
    pub res: Vec<ResBlock>,
    pub latent: Latent,
}

impl Encoder {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, hyper: &BlockHyper, windowed: bool, conv_stack: bool) -> Result<Self> {
        let cl = hyper.latent_channels();
        b.scope(name, |b| {
            Ok(Encoder {
                trans: [Conv::new(b, "trans0", 1, cl, 3, hyper.downscale)?, Conv::new(b, "trans1", cl, cl, 3, 1)?],
                res: (0..hyper.res_depth).map(|i| ResBlock::new(b, &format!("res{i}"), cl)).collect::<Result<_>>()?,
                latent: Latent::new(b, "latent", hyper, windowed, conv_stack)?,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.trans[0].forward(g, x)?;
        let h = g.silu(h)?;
        let mut h = self.trans[1].forward(g, h)?;
        for r in &self.res {
            h = r.forward(g, h)?;
        }
        self.latent.forward(g, h)
    }
}

/// `TailConv(Trans(ResSeq(WMB(Feat))))`, the mirror of [`Encoder`].
#[derive(Clone, Debug)]
pub struct Decoder {
    pub latent: Latent,
    pub res: Vec<ResBlock>,
    pub trans: Conv,
    pub tail: Conv,
    channels: usize,
}

impl Decoder {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, hyper: &BlockHyper, windowed: bool, conv_stack: bool) -> Result<Self> {
        let cl = hyper.latent_channels();
        b.scope(name, |b| {
            Ok(Decoder {
                latent: Latent::new(b, "latent", hyper, windowed, conv_stack)?,
                res: (0..hyper.res_depth).map(|i| ResBlock::new(b, &format!("res{i}"), cl)).collect::<Result<_>>()?,
                trans: Conv::new(b, "trans", cl, cl, 3, 1)?,
                tail: Conv::new(b, "tail", cl, 1, 3, 1)?,
                channels: cl,
            })
        })
    }

    /// Decodes a latent map back to an `out = (H, W)` image in `(0, 1)`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, feat: Var, out: (usize, usize)) -> Result<Var> {
        let s = g.shape(feat);
        if s.len() != 4 || s[1] != self.channels {
            return Err(SpiError::SizeMismatch { what: "decoder latent", expected: format!("(B, {}, h, w)", self.channels), got: format!("{s:?}") });
        }
        let mut h = self.latent.forward(g, feat)?;
        for r in &self.res {
            h = r.forward(g, h)?;
        }
        let h = super::layers::resize(g, h, out)?;
        let h = self.trans.forward(g, h)?;
        let h = g.silu(h)?;
        let t = self.tail.forward(g, h)?;
        Ok(g.sigmoid(t)?)
    }
}
