//! Classical methods across sampling ratios, printed as the metrics CSV.

use spi_core::config::{ExperimentConfig, Method};
use spi_core::experiment::{acquire, metric_csv, reconstruct, score_against_truth, MetricRow};

fn main() -> spi_core::Result<()> {
    let mut rows = Vec::new();
    for pct in [1.0, 2.0, 4.0, 6.0, 8.0, 10.0] {
        for method in [Method::Dgi, Method::Ista] {
            let cfg = ExperimentConfig { scene: "stripes".into(), method, ratio: Some(pct / 100.0), ..Default::default() };
            let (cfg, m, y, scene) = acquire(&cfg)?;
            let recon = reconstruct(&cfg, &m, &y)?;
            let report = score_against_truth(&recon.image, &scene.expect("simulated"))?;
            rows.push(MetricRow::new(&cfg.scene, method.name(), m.sampling_ratio(), cfg.seeds.master, &report));
        }
    }
    print!("{}", String::from_utf8_lossy(&metric_csv(&rows)?));
    Ok(())
}
