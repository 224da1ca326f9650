//! Scores a noisy reconstruction against the true scene and against a
//! pseudo ground truth derived from the reconstruction itself.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spi_core::metrics::{evaluate, otsu_threshold, pseudo_gt, threshold_masks, PseudoGtConfig, Reference};
use spi_core::scenes::Scene;
use spi_core::Image;

fn main() -> spi_core::Result<()> {
    let truth = Scene::Glyph.image();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.08).expect("valid sigma");
    let recon = Image::from_fn(64, 64, |r, c| (0.2 + 0.7 * truth.get(r, c) + noise.sample(&mut rng)).clamp(0.0, 1.0));

    let (t, b) = threshold_masks(&truth, 0.5);
    let gt = evaluate(&recon, &truth, Reference::GroundTruth, Some((&t, &b)))?;
    println!("vs ground truth: psnr {:.2} dB  ssim {:.3}  cnr {:.2}", gt.psnr.db, gt.ssim.value, gt.cnr.unwrap_or(f64::NAN));

    let pgt = pseudo_gt(&recon, &PseudoGtConfig::default());
    assert!(!pgt.degenerate);
    let (t, b) = threshold_masks(&pgt.image, otsu_threshold(&pgt.image));
    let p = evaluate(&recon, &pgt.image, Reference::PseudoGt, Some((&t, &b)))?;
    println!("vs {}:    psnr {:.2} dB  ssim {:.3}  cnr {:.2}", p.against.label(), p.psnr.db, p.ssim.value, p.cnr.unwrap_or(f64::NAN));
    Ok(())
}
