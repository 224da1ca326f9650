use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spi_engine::{Graph, ParamId, ParamStore, Real, Tensor, Var};

use super::layers::Builder;
use super::net::{Fidelity, Res2MmNet, Unet};
use super::sparsity::{lambda_of, soft_threshold_smooth, Decoder, Encoder, ALPHA_INIT};
use super::{BlockHyper, ThresholdBounds, Variant};
use crate::error::Result;

#[derive(Clone, Debug)]
struct Proximal {
    encoder: Encoder,
    decoder: Decoder,
    alpha: ParamId,
}

/// Graph values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// Fidelity output `O_F`, `(1, 1, H, W)`.
    pub of: Var,
    /// Encoder latent `O_SE`.
    pub ose: Option<Var>,
    /// Thresholded latent `Feat_sp`.
    pub feat: Option<Var>,
    /// Reconstruction `O_P` (equal to `of` without a proximal branch).
    pub op: Var,
    /// Threshold `lambda(alpha)`, shape `[1]`.
    pub lambda: Option<Var>,
}

/// Parameters, architecture and the fixed input noise `I` of one run.
#[derive(Clone, Debug)]
pub struct SistaModel<T> {
    pub params: ParamStore<T>,
    pub hyper: BlockHyper,
    pub bounds: ThresholdBounds,
    pub variant: Variant,
    pub init_seed: u64,
    pub fidelity: Fidelity,
    proximal: Option<Proximal>,
    input: Tensor<T>,
}

impl<T: Real> SistaModel<T> {
    /// Builds a model for an `height x width` image. Parameters and `I` come
    /// from separate streams of `init_seed`, so `I` is shared across variants.
    pub fn new(height: usize, width: usize, hyper: &BlockHyper, bounds: ThresholdBounds, variant: Variant, init_seed: u64) -> Result<Self> {
        hyper.validate()?;
        bounds.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder::new(&mut params, init_seed);
        let windowed = variant.windowed();
        let fidelity = match variant {
            Variant::C => Fidelity::Unet(Unet::new(&mut b, "fidelity", hyper.base_channels)?),
            _ => Fidelity::Res2Mm(Res2MmNet::new(&mut b, "fidelity", hyper, windowed)?),
        };
        let proximal = if variant.has_proximal() {
            let stack = variant == Variant::B;
            let encoder = Encoder::new(&mut b, "encoder", hyper, windowed, stack)?;
            let decoder = Decoder::new(&mut b, "decoder", hyper, windowed, stack)?;
            let alpha = b.constant("alpha", &[1], ALPHA_INIT)?;
            Some(Proximal { encoder, decoder, alpha })
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        rng.set_stream(1);
        let noise: Vec<f64> = (0..height * width).map(|_| rng.gen::<f64>()).collect();
        let input = Tensor::from_f64(vec![1, 1, height, width], &noise)?;
        Ok(SistaModel { params, hyper: hyper.clone(), bounds, variant, init_seed, fidelity, proximal, input })
    }

    pub fn height(&self) -> usize {
        self.input.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.input.shape()[3]
    }

    /// The fixed network input `I`, `(1, 1, H, W)`.
    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }

    /// Replaces `I`; used when restoring a checkpoint.
    pub fn set_input(&mut self, input: Tensor<T>) -> Result<()> {
        if input.shape() != self.input.shape() {
            return Err(crate::error::SpiError::SizeMismatch {
                what: "input noise",
                expected: format!("{:?}", self.input.shape()),
                got: format!("{:?}", input.shape()),
            });
        }
        self.input = input;
        Ok(())
    }

    pub fn alpha(&self) -> Option<ParamId> {
        self.proximal.as_ref().map(|p| p.alpha)
    }

    pub fn encoder(&self) -> Option<&Encoder> {
        self.proximal.as_ref().map(|p| &p.encoder)
    }

    pub fn decoder(&self) -> Option<&Decoder> {
        self.proximal.as_ref().map(|p| &p.decoder)
    }

    /// Current `lambda(alpha)`, if the model has a threshold.
    pub fn lambda(&self) -> Option<f64> {
        self.alpha().map(|id| self.bounds.lambda(self.params.get(id).data()[0].to_f64_lossless()))
    }

    /// Records the full forward pass on `g`, binding the current parameters.
    pub fn forward(&self, g: &mut Graph<T>) -> Result<Outputs> {
        g.bind_params(&self.params);
        let i = g.constant(self.input.clone());
        let of = self.fidelity.forward(g, i)?;
        let Some(p) = &self.proximal else {
            return Ok(Outputs { of, ose: None, feat: None, op: of, lambda: None });
        };
        let ose = p.encoder.forward(g, of)?;
        let alpha = g.param(p.alpha);
        let lambda = lambda_of(g, alpha, &self.bounds)?;
        let feat = soft_threshold_smooth(g, ose, lambda, self.bounds.beta)?;
        let op = p.decoder.forward(g, feat, (self.height(), self.width()))?;
        Ok(Outputs { of, ose: Some(ose), feat: Some(feat), op, lambda: Some(lambda) })
    }
}
