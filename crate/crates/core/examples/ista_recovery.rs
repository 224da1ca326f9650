//! ISTA twice: exact recovery of a synthetic sparse vector, then a DCT
//! reconstruction of the glyph scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spi_core::classical::{ista_reconstruct, ista_solve, DenseOp, IstaConfig, Sparsifier};
use spi_core::config::ExperimentConfig;
use spi_core::experiment::{score_against_truth, simulate};

fn main() -> spi_core::Result<()> {
    let (n, m, k) = (256, 128, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0) / (m as f64).sqrt()).collect();
    let op = DenseOp::new(m, n, a)?;
    let mut x = vec![0.0; n];
    for _ in 0..k {
        x[rng.gen_range(0..n)] = rng.gen_range(-2.0..2.0);
    }
    let y = op.apply(&x);
    let cfg = IstaConfig { reg_weight: 1e-4, transform: Sparsifier::Identity, max_iters: 20_000, tol: 1e-10, ..Default::default() };
    let r = ista_solve(&op, &y, (1, n), &cfg)?;
    let err = r.x.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / x.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("sparse: {} iterations, relative error {err:.2e}, objective monotone {}", r.iterations, r.objective_monotone());

    let cfg = ExperimentConfig { ratio: Some(0.10), ..Default::default() }.resolved();
    let sim = simulate(&cfg)?;
    let out = ista_reconstruct(&sim.patterns, &sim.y, &cfg.ista)?;
    let score = score_against_truth(&out.image, &sim.scene)?;
    println!(
        "glyph 10%: {} iterations, step {:.3e} (L = {:.3e}), psnr {:.2} dB",
        out.report.iterations, out.report.step_size, out.report.lipschitz, score.psnr.db
    );
    Ok(())
}
