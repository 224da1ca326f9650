//! Network blocks of the unrolled model and the model itself.

mod layers;
mod model;
mod net;
mod res2mmb;
mod sparsity;
mod vssb;
mod wmb;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};

pub use layers::{Builder, Conv, DwConv, Norm, ResBlock};
pub use model::{Outputs, SistaModel};
pub use net::{ConvStack, Fidelity, MamCnn, Res2MmNet, Unet};
pub use res2mmb::{Res2Mmb, ScaleOrder};
pub use sparsity::{lambda_of, soft_threshold_smooth, Decoder, Encoder, Latent, ALPHA_INIT};
pub use vssb::{directional_scan_sum, from_sequence_index, to_sequence_index, DirParams, Direction, Ss2d, Vssb};
pub use wmb::{partition_index, reverse_index, windowed, WindowGrid, Wmb};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockHyper {
    /// Feature width `C` of the fidelity network.
    pub base_channels: usize,
    /// Number of MamCNN blocks `N`.
    pub n_mamcnn: usize,
    /// Window size `w` of the windowed scans.
    pub window: usize,
    /// State dimension `d` of each selective scan.
    pub state_dim: usize,
    /// Spatial reduction of the sparsity encoder.
    pub downscale: usize,
    /// Residual blocks in the encoder and decoder.
    pub res_depth: usize,
    /// Latent width as a multiple of `C`.
    pub latent_mult: usize,
    /// `Conv_2`/`Conv_4` as stride-1 conv plus average pooling.
    pub pooled_downsample: bool,
    /// One input projection per scan direction instead of a shared one.
    pub per_direction_proj: bool,
}

impl Default for BlockHyper {
    fn default() -> Self {
        BlockHyper {
            base_channels: 32,
            n_mamcnn: 3,
            window: 8,
            state_dim: 8,
            downscale: 2,
            res_depth: 2,
            latent_mult: 4,
            pooled_downsample: false,
            per_direction_proj: false,
        }
    }
}

impl BlockHyper {
    /// Reduced widths that train in seconds per hundred iterations on one core.
    pub fn light() -> Self {
        BlockHyper { base_channels: 8, n_mamcnn: 1, window: 8, state_dim: 4, downscale: 2, res_depth: 1, latent_mult: 2, ..Default::default() }
    }

    /// Tiny configuration for gradient checks.
    pub fn toy() -> Self {
        BlockHyper { base_channels: 4, n_mamcnn: 1, window: 4, state_dim: 2, downscale: 2, res_depth: 1, latent_mult: 1, ..Default::default() }
    }

    pub fn latent_channels(&self) -> usize {
        self.base_channels * self.latent_mult
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("base_channels", self.base_channels),
            ("n_mamcnn", self.n_mamcnn),
            ("window", self.window),
            ("state_dim", self.state_dim),
            ("downscale", self.downscale),
            ("res_depth", self.res_depth),
            ("latent_mult", self.latent_mult),
        ];
        match counts.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(SpiError::invalid(format!("{name} must be >= 1"))),
            None => Ok(()),
        }
    }
}

/// Bounds of the learnable threshold and the softplus sharpness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub beta: f64,
}

impl Default for ThresholdBounds {
    fn default() -> Self {
        ThresholdBounds { lambda_min: 0.01, lambda_max: 0.5, beta: 20.0 }
    }
}

impl ThresholdBounds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.lambda_min && self.lambda_min < self.lambda_max && self.lambda_max.is_finite()) {
            return Err(SpiError::invalid(format!("need 0 < lambda_min < lambda_max, got {} and {}", self.lambda_min, self.lambda_max)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(SpiError::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        Ok(())
    }

    /// `lambda_min + (lambda_max - lambda_min) * sigmoid(alpha)`.
    pub fn lambda(&self, alpha: f64) -> f64 {
        self.lambda_min + (self.lambda_max - self.lambda_min) * spi_engine::ops::sigmoid(alpha)
    }
}

/// Full model or one of the ablations `a`..`g`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Full,
    /// Fidelity module only: no proximal branch, no threshold, no sparsity loss.
    A,
    /// Window blocks of the proximal branch replaced by conv stacks.
    B,
    /// Fidelity network replaced by a three-level conv UNet.
    C,
    /// Window partitioning disabled; global scans only.
    D,
    /// Fidelity loss weight set to zero.
    E,
    /// Sparsity loss weight set to zero.
    F,
    /// Fidelity and sparsity loss weights set to zero.
    G,
}

impl Variant {
    pub const ABLATIONS: [Variant; 7] = [Variant::A, Variant::B, Variant::C, Variant::D, Variant::E, Variant::F, Variant::G];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::A => "a",
            Variant::B => "b",
            Variant::C => "c",
            Variant::D => "d",
            Variant::E => "e",
            Variant::F => "f",
            Variant::G => "g",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        let t = tag.trim().to_ascii_lowercase();
        Self::ABLATIONS.into_iter().chain([Variant::Full]).find(|v| v.tag() == t).ok_or_else(|| SpiError::UnknownAblation(tag.to_string()))
    }

    pub fn has_proximal(self) -> bool {
        self != Variant::A
    }

    pub fn windowed(self) -> bool {
        self != Variant::D
    }
}
