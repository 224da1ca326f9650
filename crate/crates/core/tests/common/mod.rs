//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Compressed-sensing instance: Gaussian `m x n` operator (entries
/// `N(0, 1/m)`), `k`-sparse signal with entries of magnitude in [1, 2].
pub struct SparseProblem {
    pub a: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub support: Vec<usize>,
    pub m: usize,
    pub n: usize,
}

pub fn sparse_problem(n: usize, m: usize, k: usize, seed: u64) -> SparseProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let a: Vec<f64> = (0..m * n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut support: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
    support.sort_unstable();
    let mut x = vec![0.0; n];
    for &i in &support {
        let mag = rng.gen_range(1.0..2.0);
        x[i] = if rng.gen::<bool>() { mag } else { -mag };
    }
    let y = (0..m).map(|r| (0..n).map(|c| a[r * n + c] * x[c]).sum()).collect();
    SparseProblem { a, x, y, support, m, n }
}

/// Least squares restricted to `support`, by normal equations and
/// Gaussian elimination with partial pivoting.
pub fn lstsq_on_support(a: &[f64], y: &[f64], m: usize, n: usize, support: &[usize]) -> Vec<f64> {
    let k = support.len();
    let mut g = vec![0.0; k * (k + 1)];
    for (i, &ci) in support.iter().enumerate() {
        for (j, &cj) in support.iter().enumerate() {
            g[i * (k + 1) + j] = (0..m).map(|r| a[r * n + ci] * a[r * n + cj]).sum();
        }
        g[i * (k + 1) + k] = (0..m).map(|r| a[r * n + ci] * y[r]).sum();
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&p, &q| g[p * (k + 1) + col].abs().total_cmp(&g[q * (k + 1) + col].abs())).unwrap();
        for c in 0..=k {
            g.swap(col * (k + 1) + c, piv * (k + 1) + c);
        }
        for r in 0..k {
            if r != col {
                let f = g[r * (k + 1) + col] / g[col * (k + 1) + col];
                for c in col..=k {
                    g[r * (k + 1) + c] -= f * g[col * (k + 1) + c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for (i, &ci) in support.iter().enumerate() {
        x[ci] = g[i * (k + 1) + k] / g[i * (k + 1) + i];
    }
    x
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
    num / den
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for t in i..=j {
                r[idx[t]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
