//! Simulated single-pixel acquisition: pattern ensembles, bucket
//! measurements `y = Phi x + e`, and the SPIM file format.

mod patterns;
mod spim;

pub use patterns::{make_patterns, MeasurementMatrix, PatternKind};
pub use spim::{load_measurements, read_spim, save_measurements, write_spim, SPIM_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};
use crate::image::Image;

/// Detector noise model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Additive Gaussian standard deviation as a fraction of the mean
    /// noiseless bucket value.
    pub gaussian_sigma: f64,
    /// Photons per unit intensity; 0 disables shot noise.
    pub poisson_scale: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub const fn clean() -> Self {
        NoiseSpec { gaussian_sigma: 0.0, poisson_scale: 0.0, seed: 0 }
    }

    /// Scattering-and-shot-noise stress preset.
    pub const fn underwater(seed: u64) -> Self {
        NoiseSpec { gaussian_sigma: 0.05, poisson_scale: 1e4, seed }
    }

    pub fn is_clean(&self) -> bool {
        self.gaussian_sigma == 0.0 && self.poisson_scale == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(SpiError::invalid(format!("gaussian_sigma must be >= 0, got {}", self.gaussian_sigma)));
        }
        if !(self.poisson_scale >= 0.0 && self.poisson_scale.is_finite()) {
            return Err(SpiError::invalid(format!("poisson_scale must be >= 0, got {}", self.poisson_scale)));
        }
        Ok(())
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::clean()
    }
}

/// Bucket values plus the noise that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
    pub noise: NoiseSpec,
    /// Absolute Gaussian standard deviation actually applied.
    pub applied_sigma: f64,
}

impl MeasurementVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `Phi x`, accumulated in f64.
pub fn project(m: &MeasurementMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != m.n_pix() {
        return Err(SpiError::SizeMismatch { what: "scene length", expected: m.n_pix().to_string(), got: x.len().to_string() });
    }
    Ok(m.rows().map(|row| row.iter().zip(x).map(|(&p, &v)| p as f64 * v).sum()).collect())
}

/// Simulates `y = Phi x + e`: projection, optional Poisson resampling, then
/// additive Gaussian noise.
pub fn measure(m: &MeasurementMatrix, x: &Image, noise: &NoiseSpec) -> Result<MeasurementVector> {
    noise.validate()?;
    if x.height() != m.height || x.width() != m.width {
        return Err(SpiError::SizeMismatch {
            what: "scene size",
            expected: format!("{}x{}", m.height, m.width),
            got: format!("{}x{}", x.height(), x.width()),
        });
    }
    let mut values = project(m, x.data())?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    if noise.poisson_scale > 0.0 {
        for v in values.iter_mut() {
            let lambda = *v * noise.poisson_scale;
            if lambda > 0.0 {
                let p = Poisson::new(lambda).map_err(|e| SpiError::invalid(format!("poisson rate {lambda}: {e}")))?;
                *v = p.sample(&mut rng) / noise.poisson_scale;
            } else {
                *v = 0.0;
            }
        }
    }
    let mut applied_sigma = 0.0;
    if noise.gaussian_sigma > 0.0 {
        let clean = project(m, x.data())?;
        let mean_signal = clean.iter().map(|v| v.abs()).sum::<f64>() / clean.len() as f64;
        applied_sigma = noise.gaussian_sigma * mean_signal;
        if applied_sigma > 0.0 {
            let normal = Normal::new(0.0, applied_sigma).map_err(|e| SpiError::invalid(e.to_string()))?;
            for v in values.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(MeasurementVector { values, noise: *noise, applied_sigma })
}

/// Sampling ratio `N_M / N_P` as a percentage rounded half away from zero
/// to two decimals.
pub fn ratio_percent(n_meas: usize, n_pix: usize) -> f64 {
    (n_meas as f64 / n_pix as f64 * 1e4).round() / 100.0
}

pub fn format_ratio(n_meas: usize, n_pix: usize) -> String {
    format!("{:.2}%", ratio_percent(n_meas, n_pix))
}

/// Measurement count for a sampling ratio (fraction, e.g. `0.0293`).
///
/// Among the counts whose ratio lies within 0.01 percentage points of the
/// request, picks the one with the most trailing decimal zeros (ties go to
/// the closest). Falls back to plain rounding when no count qualifies.
pub fn n_meas_for_ratio(ratio: f64, n_pix: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(SpiError::invalid(format!("sampling ratio must be in (0, 1], got {ratio}")));
    }
    let exact = ratio * n_pix as f64;
    let slack = 1e-4 * n_pix as f64;
    let lo = ((exact - slack).ceil().max(1.0)) as usize;
    let hi = ((exact + slack).floor() as usize).min(n_pix);
    let trailing = |mut n: usize| {
        let mut z = 0;
        while n > 0 && n.is_multiple_of(10) {
            n /= 10;
            z += 1;
        }
        z
    };
    let best = (lo..=hi).max_by(|&a, &b| {
        trailing(a).cmp(&trailing(b)).then_with(|| (b as f64 - exact).abs().total_cmp(&(a as f64 - exact).abs()))
    });
    Ok(best.unwrap_or_else(|| (exact.round() as usize).clamp(1, n_pix)))
}
