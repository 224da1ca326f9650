//! Builds every ablation variant of the toy network, reports its size and
//! loss weights, and fits each briefly on the same measurements.

use spi_core::arch::{BlockHyper, SistaModel, ThresholdBounds, Variant};
use spi_core::config::ExperimentConfig;
use spi_core::experiment::{score_against_truth, simulate};
use spi_core::train::{train, TrainConfig};

fn main() -> spi_core::Result<()> {
    let cfg = ExperimentConfig { ratio: Some(0.10), ..Default::default() }.resolved();
    let sim = simulate(&cfg)?;
    let tc = TrainConfig { k_max: 20, lr_max: 1e-3, normalize_y: true, ..Default::default() };
    println!("variant  params  w_fid  w_sp   w_prox  psnr_db");
    for v in [Variant::Full].into_iter().chain(Variant::ABLATIONS) {
        let model = SistaModel::<f32>::new(64, 64, &BlockHyper::toy(), ThresholdBounds::default(), v, cfg.seeds.init())?;
        let n = model.params.numel();
        let w = tc.weights.for_variant(v);
        let (report, _, _) = train(model, &sim.patterns, &sim.y.values, &tc)?;
        let s = score_against_truth(&report.op.clamped(), &sim.scene)?;
        println!("{:<8} {:>6}  {:<5}  {:<5}  {:<6}  {:.2}", v.tag(), n, w.fidelity, w.sparsity, w.proximal, s.psnr.db);
    }
    Ok(())
}
