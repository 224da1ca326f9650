//! Image quality metrics and the pseudo-ground-truth pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Psnr {
    /// `+inf` when the images are identical.
    pub db: f64,
    pub identical: bool,
}

/// `10 log10(peak^2 / MSE)`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<Psnr> {
    a.check_same_shape(b, "psnr inputs")?;
    if !(peak > 0.0) {
        return Err(SpiError::invalid(format!("psnr peak must be > 0, got {peak}")));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(Psnr { db: f64::INFINITY, identical: true });
    }
    Ok(Psnr { db: 10.0 * (peak * peak / mse).log10(), identical: false })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ssim {
    pub value: f64,
    /// The image was smaller than the window and a single global window was used.
    pub global_fallback: bool,
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_terms(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5, peak 1).
pub fn ssim(a: &Image, b: &Image) -> Result<Ssim> {
    a.check_same_shape(b, "ssim inputs")?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        let n = a.len() as f64;
        let (ma, mb) = (a.mean(), b.mean());
        let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
        for (x, y) in a.data().iter().zip(b.data()) {
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
            cov += (x - ma) * (y - mb);
        }
        return Ok(Ssim { value: ssim_terms(ma, mb, va / n, vb / n, cov / n), global_fallback: true });
    }
    let half = (SSIM_WINDOW / 2) as isize;
    let g: Vec<f64> = (-half..=half).map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / gs).collect();
    let k = SSIM_WINDOW;

    // separable valid filtering of the five moment images
    let (oh, ow) = (h - k + 1, w - k + 1);
    let filter = |src: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut rows = vec![0.0; h * ow];
        for r in 0..h {
            for c in 0..ow {
                rows[r * ow + c] = (0..k).map(|t| g[t] * src(r * w + c + t)).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                out[r * ow + c] = (0..k).map(|t| g[t] * rows[(r + t) * ow + c]).sum();
            }
        }
        out
    };
    let (ad, bd) = (a.data(), b.data());
    let mu_a = filter(&|i| ad[i]);
    let mu_b = filter(&|i| bd[i]);
    let aa = filter(&|i| ad[i] * ad[i]);
    let bb = filter(&|i| bd[i] * bd[i]);
    let ab = filter(&|i| ad[i] * bd[i]);
    let total: f64 = (0..oh * ow)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            ssim_terms(ma, mb, aa[i] - ma * ma, bb[i] - mb * mb, ab[i] - ma * mb)
        })
        .sum();
    Ok(Ssim { value: total / (oh * ow) as f64, global_fallback: false })
}

/// Contrast-to-noise ratio `(mean_target - mean_background) / std_background`.
pub fn cnr(img: &Image, target: &[bool], background: &[bool]) -> Result<f64> {
    let n = img.len();
    if target.len() != n || background.len() != n {
        return Err(SpiError::SizeMismatch {
            what: "cnr masks",
            expected: n.to_string(),
            got: format!("{} and {}", target.len(), background.len()),
        });
    }
    if target.iter().zip(background).any(|(t, b)| *t && *b) {
        return Err(SpiError::invalid("cnr masks overlap"));
    }
    let pick = |mask: &[bool]| -> Vec<f64> { img.data().iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect() };
    let (t, b) = (pick(target), pick(background));
    if t.is_empty() || b.is_empty() {
        return Err(SpiError::invalid("cnr masks must both be non-empty"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mt, mb) = (mean(&t), mean(&b));
    let std_b = (b.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / b.len() as f64).sqrt();
    if !(std_b > 0.0) {
        return Err(SpiError::DegenerateBackground);
    }
    Ok((mt - mb) / std_b)
}

/// Target/background masks from a threshold: `>= t` is target.
pub fn threshold_masks(img: &Image, t: f64) -> (Vec<bool>, Vec<bool>) {
    let target: Vec<bool> = img.data().iter().map(|&v| v >= t).collect();
    let background = target.iter().map(|m| !m).collect();
    (target, background)
}

/// Otsu threshold over a 256-bin histogram of `[0, 1]` values.
pub fn otsu_threshold(img: &Image) -> f64 {
    let mut hist = [0usize; 256];
    for &v in img.data() {
        hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
    }
    let total = img.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0, mut best, mut best_t) = (0.0, 0.0, -1.0, 0usize);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    // values strictly above the split bin are target
    (best_t as f64 + 0.5) / 255.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    GroundTruth,
    PseudoGt,
}

impl Reference {
    pub fn label(self) -> &'static str {
        match self {
            Reference::GroundTruth => "ground-truth",
            Reference::PseudoGt => "pseudo-gt",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: Psnr,
    pub ssim: Ssim,
    pub cnr: Option<f64>,
    pub against: Reference,
}

/// PSNR, SSIM and (when masks are given) CNR of `recon` against `reference`.
pub fn evaluate(recon: &Image, reference: &Image, against: Reference, masks: Option<(&[bool], &[bool])>) -> Result<MetricReport> {
    let psnr = psnr(recon, reference, 1.0)?;
    let ssim = ssim(recon, reference)?;
    let cnr = masks.map(|(t, b)| cnr(recon, t, b)).transpose()?;
    Ok(MetricReport { psnr, ssim, cnr, against })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoGtConfig {
    /// Quantile used as the background level.
    pub background_quantile: f64,
    pub tv_weight: f64,
    pub tv_iters: usize,
}

impl Default for PseudoGtConfig {
    fn default() -> Self {
        PseudoGtConfig { background_quantile: 0.1, tv_weight: 0.05, tv_iters: 100 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoGt {
    pub image: Image,
    /// The cleaned image was constant; `image` is all zeros.
    pub degenerate: bool,
}

/// Background subtraction, TV denoising, 3x3 median (standing in for BM3D),
/// opening then closing, and a final rescale to `[0, 1]`.
pub fn pseudo_gt(raw: &Image, cfg: &PseudoGtConfig) -> PseudoGt {
    let level = quantile(raw.data(), cfg.background_quantile);
    let sub = raw.map(|v| (v - level).max(0.0));
    let tv = tv_denoise(&sub, cfg.tv_weight, cfg.tv_iters);
    let med = median3(&tv);
    let cleaned = closing(&opening(&med));
    let (lo, hi) = cleaned.min_max();
    if hi > lo {
        PseudoGt { image: cleaned.normalized(), degenerate: false }
    } else {
        PseudoGt { image: Image::zeros(raw.height(), raw.width()), degenerate: true }
    }
}

fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = ((s.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    s[idx]
}

/// ROF denoising `min_u ||u - f||^2 / 2 + weight TV(u)` by Chambolle's dual
/// projection iterations (step 1/8).
pub fn tv_denoise(f: &Image, weight: f64, iters: usize) -> Image {
    let (h, w) = (f.height(), f.width());
    if weight <= 0.0 {
        return f.clone();
    }
    let tau = 0.125;
    let mut px = vec![0.0; h * w];
    let mut py = vec![0.0; h * w];
    let fd = f.data();
    let div = |px: &[f64], py: &[f64], r: usize, c: usize| -> f64 {
        let i = r * w + c;
        let dx = if c == 0 { px[i] } else if c == w - 1 { -px[i - 1] } else { px[i] - px[i - 1] };
        let dy = if r == 0 { py[i] } else if r == h - 1 { -py[i - w] } else { py[i] - py[i - w] };
        dx + dy
    };
    let mut u = vec![0.0; h * w];
    for _ in 0..iters {
        for r in 0..h {
            for c in 0..w {
                u[r * w + c] = div(&px, &py, r, c) - fd[r * w + c] / weight;
            }
        }
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let gx = if c + 1 < w { u[i + 1] - u[i] } else { 0.0 };
                let gy = if r + 1 < h { u[i + w] - u[i] } else { 0.0 };
                let norm = 1.0 + tau * (gx * gx + gy * gy).sqrt();
                px[i] = (px[i] + tau * gx) / norm;
                py[i] = (py[i] + tau * gy) / norm;
            }
        }
    }
    Image::from_fn(h, w, |r, c| fd[r * w + c] - weight * div(&px, &py, r, c))
}

fn neighborhood(img: &Image, r: usize, c: usize) -> impl Iterator<Item = f64> + '_ {
    let (h, w) = (img.height() as isize, img.width() as isize);
    (-1..=1isize).flat_map(move |dr| {
        (-1..=1isize).map(move |dc| {
            let rr = (r as isize + dr).clamp(0, h - 1) as usize;
            let cc = (c as isize + dc).clamp(0, w - 1) as usize;
            img.get(rr, cc)
        })
    })
}

/// 3x3 median with replicated borders.
pub fn median3(img: &Image) -> Image {
    Image::from_fn(img.height(), img.width(), |r, c| {
        let mut v: Vec<f64> = neighborhood(img, r, c).collect();
        v.sort_by(f64::total_cmp);
        v[4]
    })
}

/// Grayscale erosion with a 3x3 square.
pub fn erode(img: &Image) -> Image {
    Image::from_fn(img.height(), img.width(), |r, c| neighborhood(img, r, c).fold(f64::INFINITY, f64::min))
}

/// Grayscale dilation with a 3x3 square.
pub fn dilate(img: &Image) -> Image {
    Image::from_fn(img.height(), img.width(), |r, c| neighborhood(img, r, c).fold(f64::NEG_INFINITY, f64::max))
}

pub fn opening(img: &Image) -> Image {
    dilate(&erode(img))
}

pub fn closing(img: &Image) -> Image {
    erode(&dilate(img))
}
