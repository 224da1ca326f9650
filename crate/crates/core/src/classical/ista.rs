use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dct2;
use crate::error::{Result, SpiError};
use crate::forward::{MeasurementMatrix, MeasurementVector};
use crate::image::Image;

/// Dense row-major linear operator.
#[derive(Clone, Debug)]
pub struct DenseOp {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseOp {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(SpiError::SizeMismatch { what: "operator data", expected: format!("{rows}x{cols}"), got: data.len().to_string() });
        }
        Ok(DenseOp { rows, cols, data })
    }

    pub fn from_patterns(m: &MeasurementMatrix) -> Self {
        DenseOp { rows: m.n_meas(), cols: m.n_pix(), data: m.to_f64() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn apply_t(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &rv) in self.data.chunks_exact(self.cols).zip(r) {
            if rv != 0.0 {
                out.iter_mut().zip(row).for_each(|(o, a)| *o += a * rv);
            }
        }
        out
    }
}

/// Estimate of `||A||^2` (largest eigenvalue of `A^T A`).
pub fn power_iteration(op: &DenseOp, iters: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..op.cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let w = op.apply_t(&op.apply(&v));
        est = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        v = w;
    }
    est
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sparsifier {
    Identity,
    Dct2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IstaConfig {
    /// Gradient step `eta`; `None` uses `0.9 / L` with `L` from power iteration.
    pub step_size: Option<f64>,
    /// Weight `lambda` of the l1 term.
    pub reg_weight: f64,
    pub transform: Sparsifier,
    pub max_iters: usize,
    /// Stop when `||x_{k+1} - x_k|| / ||x_k|| < tol`.
    pub tol: f64,
}

impl IstaConfig {
    pub const POWER_ITERS: usize = 50;
    pub const STEP_FRACTION: f64 = 0.9;
}

impl Default for IstaConfig {
    fn default() -> Self {
        IstaConfig { step_size: None, reg_weight: 0.0, transform: Sparsifier::Dct2, max_iters: 2000, tol: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct IstaResult {
    /// Final iterate, unclipped.
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||Phi x_k - y||` for `k = 0..=iterations`.
    pub residual_history: Vec<f64>,
    /// `1/2 ||Phi x_k - y||^2 + lambda ||Psi x_k||_1` for `k = 0..=iterations`.
    pub objective_history: Vec<f64>,
    pub step_size: f64,
    pub lipschitz: f64,
}

impl IstaResult {
    /// Whether the objective never increased (up to rounding).
    pub fn objective_monotone(&self) -> bool {
        self.objective_history.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1e-300))
    }
}

#[derive(Clone, Debug)]
pub struct IstaImage {
    pub image: Image,
    pub report: IstaResult,
}

/// `sgn(z) max(|z| - t, 0)`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// ISTA on `min_x 1/2 ||A x - y||^2 + lambda ||Psi x||_1` from `x_0 = 0`.
///
/// `shape` is the `(h, w)` grid the DCT acts on; its product must equal
/// the operator's column count.
pub fn ista_solve(op: &DenseOp, y: &[f64], shape: (usize, usize), cfg: &IstaConfig) -> Result<IstaResult> {
    if y.len() != op.rows {
        return Err(SpiError::SizeMismatch { what: "measurement count", expected: op.rows.to_string(), got: y.len().to_string() });
    }
    if shape.0 * shape.1 != op.cols {
        return Err(SpiError::SizeMismatch {
            what: "ISTA grid",
            expected: op.cols.to_string(),
            got: format!("{}x{}", shape.0, shape.1),
        });
    }
    if !(cfg.reg_weight >= 0.0) || !(cfg.tol >= 0.0) {
        return Err(SpiError::invalid(format!("reg_weight and tol must be >= 0, got {} and {}", cfg.reg_weight, cfg.tol)));
    }
    let lipschitz = power_iteration(op, IstaConfig::POWER_ITERS, 0x15A);
    let eta = match cfg.step_size {
        Some(e) if e > 0.0 => {
            if e * lipschitz > 1.0 + 1e-9 {
                return Err(SpiError::invalid(format!(
                    "step size {e:.3e} exceeds 1/L = {:.3e}; ISTA is only monotone for eta <= 1/L",
                    1.0 / lipschitz
                )));
            }
            e
        }
        Some(e) => return Err(SpiError::invalid(format!("step size must be > 0, got {e}"))),
        None if lipschitz > 0.0 => IstaConfig::STEP_FRACTION / lipschitz,
        None => return Err(SpiError::invalid("operator is zero")),
    };
    let dct = match cfg.transform {
        Sparsifier::Identity => None,
        Sparsifier::Dct2 => Some(Dct2::new(shape.0, shape.1)),
    };
    let thresh = cfg.reg_weight * eta;
    let l1 = |x: &[f64]| -> f64 {
        match &dct {
            Some(d) => d.forward(x).iter().map(|v| v.abs()).sum(),
            None => x.iter().map(|v| v.abs()).sum(),
        }
    };

    let mut x = vec![0.0; op.cols];
    let initial = norm2(y);
    let mut residual_history = vec![initial];
    let mut objective_history = vec![0.5 * initial * initial];
    let mut iterations = 0;
    let mut r: Vec<f64> = y.iter().map(|v| -v).collect();
    while iterations < cfg.max_iters {
        let grad = op.apply_t(&r);
        let z: Vec<f64> = x.iter().zip(&grad).map(|(xv, g)| xv - eta * g).collect();
        let next = match &dct {
            Some(d) => {
                let c: Vec<f64> = d.forward(&z).iter().map(|&v| soft_threshold(v, thresh)).collect();
                d.inverse(&c)
            }
            None => z.iter().map(|&v| soft_threshold(v, thresh)).collect(),
        };
        iterations += 1;
        r = op.apply(&next).iter().zip(y).map(|(a, b)| a - b).collect();
        let res = norm2(&r);
        if !res.is_finite() || (initial > 0.0 && res > 10.0 * initial) {
            return Err(SpiError::Divergence { iteration: iterations, residual: res, initial });
        }
        residual_history.push(res);
        objective_history.push(0.5 * res * res + cfg.reg_weight * l1(&next));
        let step: f64 = norm2(&next.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        let base = norm2(&x);
        x = next;
        if base > 0.0 && step / base < cfg.tol {
            break;
        }
    }
    Ok(IstaResult { x, iterations, residual_history, objective_history, step_size: eta, lipschitz })
}

/// ISTA reconstruction of a measured scene, clipped to `[0, 1]`.
pub fn ista_reconstruct(m: &MeasurementMatrix, y: &MeasurementVector, cfg: &IstaConfig) -> Result<IstaImage> {
    let op = DenseOp::from_patterns(m);
    let report = ista_solve(&op, &y.values, (m.height, m.width), cfg)?;
    let image = Image::new(m.height, m.width, report.x.clone())?.clamped();
    Ok(IstaImage { image, report })
}
