//! Fits the untrained network to one 10% acquisition of the glyph scene.
//!
//! `cargo run --release --example sista_fit [iterations] [out_dir]`.
//! Uses the light preset with normalized measurements; 300 iterations take
//! a couple of minutes on one core.

use spi_core::arch::{BlockHyper, SistaModel, ThresholdBounds, Variant};
use spi_core::classical::dgi_reconstruct;
use spi_core::config::ExperimentConfig;
use spi_core::experiment::{score_against_truth, simulate};
use spi_core::train::{Session, TrainConfig};

fn main() -> spi_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let k: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let out = args.next();

    let cfg = ExperimentConfig { ratio: Some(0.10), ..Default::default() }.resolved();
    let sim = simulate(&cfg)?;
    let model = SistaModel::<f32>::new(64, 64, &BlockHyper::light(), ThresholdBounds::default(), Variant::Full, cfg.seeds.init())?;
    println!("{} parameters", model.params.numel());
    let train = TrainConfig { k_max: k, lr_max: 1e-3, normalize_y: true, ..Default::default() };
    let every = (k / 10).max(1);
    let (report, model, _) = Session::new(model, &sim.patterns, &sim.y.values, &train)?.run_with(|r| {
        if r.iteration % every == 0 {
            println!("iter {:5}  total {:.4e}  fidelity {:.4e}  lambda {:.4}", r.iteration, r.total, r.fidelity, r.lambda.unwrap_or(f64::NAN));
        }
    })?;

    let dgi = score_against_truth(&dgi_reconstruct(&sim.patterns, &sim.y)?, &sim.scene)?;
    let of = score_against_truth(&report.of.clamped(), &sim.scene)?;
    let op = score_against_truth(&report.op.clamped(), &sim.scene)?;
    println!("dgi {:.2} dB | O_F {:.2} dB | O_P {:.2} dB ssim {:.3} | lambda {:.4} | {:.1}s",
        dgi.psnr.db, of.psnr.db, op.psnr.db, op.ssim.value, model.lambda().unwrap_or(f64::NAN), report.wall_time.as_secs_f64());
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| spi_core::SpiError::Invalid(format!("{dir}: {e}")))?;
        report.op.clamped().write_pgm(format!("{dir}/recon.pgm"))?;
        report.of.clamped().write_pgm(format!("{dir}/of.pgm"))?;
    }
    Ok(())
}
