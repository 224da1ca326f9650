use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    /// Independent {0, 1} entries with p = 0.5.
    Bernoulli,
    /// Low-pass filtered white noise mapped into [0, 1].
    GaussianSpeckle,
    /// Rows of a randomly permuted Sylvester-Hadamard matrix mapped to {0, 1}.
    HadamardSubset,
}

impl PatternKind {
    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Bernoulli => "bernoulli",
            PatternKind::GaussianSpeckle => "gaussian-speckle",
            PatternKind::HadamardSubset => "hadamard-subset",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [PatternKind::Bernoulli, PatternKind::GaussianSpeckle, PatternKind::HadamardSubset].into_iter().find(|k| k.name() == s)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            PatternKind::Bernoulli => 0,
            PatternKind::GaussianSpeckle => 1,
            PatternKind::HadamardSubset => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(PatternKind::Bernoulli),
            1 => Some(PatternKind::GaussianSpeckle),
            2 => Some(PatternKind::HadamardSubset),
            _ => None,
        }
    }
}

/// `N_M x N_P` pattern stack, one flattened H x W pattern per row.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementMatrix {
    pub kind: PatternKind,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    patterns: Vec<f32>,
}

impl MeasurementMatrix {
    /// Wraps explicit rows; every entry must lie in `[0, 1]`.
    pub fn from_rows(kind: PatternKind, height: usize, width: usize, seed: u64, patterns: Vec<f32>) -> Result<Self> {
        let n_pix = height * width;
        if n_pix == 0 || patterns.is_empty() || !patterns.len().is_multiple_of(n_pix) {
            return Err(SpiError::SizeMismatch {
                what: "pattern data",
                expected: format!("a non-zero multiple of {n_pix}"),
                got: patterns.len().to_string(),
            });
        }
        if let Some(i) = patterns.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(SpiError::invalid(format!("pattern entry {i} = {} outside [0, 1]", patterns[i])));
        }
        Ok(MeasurementMatrix { kind, height, width, seed, patterns })
    }

    pub fn n_meas(&self) -> usize {
        self.patterns.len() / self.n_pix()
    }

    pub fn n_pix(&self) -> usize {
        self.height * self.width
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let n = self.n_pix();
        &self.patterns[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.patterns.chunks_exact(self.n_pix())
    }

    pub fn data(&self) -> &[f32] {
        &self.patterns
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.patterns.iter().map(|&v| v as f64).collect()
    }

    pub fn is_binary(&self) -> bool {
        self.patterns.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// `N_M / N_P` as a fraction.
    pub fn sampling_ratio(&self) -> f64 {
        self.n_meas() as f64 / self.n_pix() as f64
    }

    /// Sampling ratio as a two-decimal percentage string, e.g. `"2.93%"`.
    pub fn ratio_label(&self) -> String {
        super::format_ratio(self.n_meas(), self.n_pix())
    }
}

/// Deterministic pattern ensemble for a seed.
pub fn make_patterns(kind: PatternKind, n_meas: usize, height: usize, width: usize, seed: u64) -> Result<MeasurementMatrix> {
    let n_pix = height * width;
    if n_meas == 0 || n_pix == 0 {
        return Err(SpiError::invalid(format!("need n_meas >= 1 and H*W >= 1, got {n_meas} and {height}x{width}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns = match kind {
        PatternKind::Bernoulli => bernoulli(&mut rng, n_meas * n_pix),
        PatternKind::GaussianSpeckle => speckle(&mut rng, n_meas, height, width),
        PatternKind::HadamardSubset => hadamard(&mut rng, n_meas, n_pix)?,
    };
    MeasurementMatrix::from_rows(kind, height, width, seed, patterns)
}

fn bernoulli(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let bits: u64 = rng.gen();
        let take = (n - out.len()).min(64);
        out.extend((0..take).map(|b| ((bits >> b) & 1) as f32));
    }
    out
}

/// Speckle grain size (Gaussian low-pass sigma) in pixels.
const SPECKLE_SIGMA: f64 = 1.0;

fn speckle(rng: &mut ChaCha8Rng, n_meas: usize, h: usize, w: usize) -> Vec<f32> {
    let radius = (3.0 * SPECKLE_SIGMA).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * SPECKLE_SIGMA * SPECKLE_SIGMA)).exp()).collect();
    let ksum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / ksum).collect();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if n == 1 {
            return 0;
        }
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };

    let mut out = Vec::with_capacity(n_meas * h * w);
    let mut noise = vec![0.0f64; h * w];
    let mut tmp = vec![0.0f64; h * w];
    for _ in 0..n_meas {
        noise.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        for r in 0..h {
            for c in 0..w {
                tmp[r * w + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * noise[r * w + reflect(c as isize + k as isize - radius, w)])
                    .sum();
            }
        }
        for r in 0..h {
            for c in 0..w {
                noise[r * w + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * tmp[reflect(r as isize + k as isize - radius, h) * w + c])
                    .sum();
            }
        }
        let n = noise.len() as f64;
        let mean = noise.iter().sum::<f64>() / n;
        let std = (noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let std = if std > 0.0 { std } else { 1.0 };
        out.extend(noise.iter().map(|v| (0.5 + (v - mean) / (6.0 * std)).clamp(0.0, 1.0) as f32));
    }
    out
}

fn hadamard(rng: &mut ChaCha8Rng, n_meas: usize, n_pix: usize) -> Result<Vec<f32>> {
    if !n_pix.is_power_of_two() {
        return Err(SpiError::HadamardSize { n_pix, padded: n_pix.next_power_of_two() });
    }
    if n_meas > n_pix {
        return Err(SpiError::invalid(format!("hadamard-subset has only {n_pix} rows, {n_meas} requested")));
    }
    let mut order: Vec<usize> = (0..n_pix).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(n_meas * n_pix);
    for &r in &order[..n_meas] {
        // Sylvester entry H[r][c] = (-1)^popcount(r & c), mapped to (1 + h) / 2
        out.extend((0..n_pix).map(|c| if (r & c).count_ones() % 2 == 0 { 1.0f32 } else { 0.0 }));
    }
    Ok(out)
}
