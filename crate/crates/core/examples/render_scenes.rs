//! Writes the built-in scenes as PGM files.
//!
//! `cargo run --example render_scenes [dir]` (default `assets/scenes`).

use spi_core::scenes::Scene;

fn main() -> spi_core::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/assets/scenes").to_string());
    std::fs::create_dir_all(&dir).map_err(|e| spi_core::SpiError::Invalid(format!("{dir}: {e}")))?;
    for s in Scene::ALL {
        let path = format!("{dir}/{}.pgm", s.name());
        s.image().write_pgm(&path)?;
        println!("{path}");
    }
    Ok(())
}
