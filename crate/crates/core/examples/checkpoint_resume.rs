//! Interrupts a fit halfway, saves an SSTA checkpoint, reloads it and
//! finishes. The result matches an uninterrupted run bit for bit.

use spi_core::arch::{BlockHyper, SistaModel, ThresholdBounds, Variant};
use spi_core::config::ExperimentConfig;
use spi_core::experiment::simulate;
use spi_core::train::{load_checkpoint, save_checkpoint, train, Session, TrainConfig};

fn main() -> spi_core::Result<()> {
    let cfg = ExperimentConfig { ratio: Some(0.05), ..Default::default() }.resolved();
    let sim = simulate(&cfg)?;
    let tc = TrainConfig { k_max: 10, lr_max: 1e-3, normalize_y: true, ..Default::default() };
    let fresh = || SistaModel::<f64>::new(64, 64, &BlockHyper::toy(), ThresholdBounds::default(), Variant::Full, 7);

    let (straight, _, _) = train(fresh()?, &sim.patterns, &sim.y.values, &tc)?;

    let mut s = Session::new(fresh()?, &sim.patterns, &sim.y.values, &tc)?;
    for _ in 0..5 {
        s.step()?;
    }
    let path = std::env::temp_dir().join("spi-example-half.ssta");
    save_checkpoint(&path, &s.model, &s.adam, serde_json::json!({ "stopped_at": 5 }))?;
    let ck = load_checkpoint::<f64>(&path)?;
    println!("checkpoint: {} tensors, adam step {}, extra {}", ck.model.params.len(), ck.header.adam_step, ck.header.extra);
    let (rest, _, _) = Session::resume(ck.model, ck.adam, &sim.patterns, &sim.y.values, &tc)?.run()?;
    let _ = std::fs::remove_file(path);

    let same = rest.records == straight.records[5..] && rest.op == straight.op;
    println!("resumed run identical to uninterrupted run: {same}");
    Ok(())
}
