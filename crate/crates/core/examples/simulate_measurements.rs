//! Simulates a noisy acquisition of a built-in scene and round-trips it
//! through the SPIM format.

use spi_core::forward::{load_measurements, make_patterns, measure, n_meas_for_ratio, save_measurements, NoiseSpec, PatternKind};
use spi_core::scenes::Scene;

fn main() -> spi_core::Result<()> {
    let scene = Scene::Texture.image();
    let n = n_meas_for_ratio(0.05, scene.len())?;
    for kind in [PatternKind::Bernoulli, PatternKind::HadamardSubset] {
        let m = make_patterns(kind, n, scene.height(), scene.width(), 11)?;
        let noise = NoiseSpec { gaussian_sigma: 0.01, seed: 12, ..NoiseSpec::clean() };
        let y = measure(&m, &scene, &noise)?;
        let path = std::env::temp_dir().join(format!("spi-example-{}.spim", kind.name()));
        save_measurements(&path, &m, &y)?;
        let (m2, y2) = load_measurements(&path)?;
        assert_eq!((m2.data(), &y2.values), (m.data(), &y.values));
        let mean = y.values.iter().sum::<f64>() / n as f64;
        println!(
            "{:<16} {} patterns ({}), mean bucket {mean:.2}, applied sigma {:.3}, {} bytes",
            kind.name(),
            n,
            m.ratio_label(),
            y.applied_sigma,
            std::fs::metadata(&path).map(|md| md.len()).unwrap_or(0)
        );
        let _ = std::fs::remove_file(path);
    }
    Ok(())
}
