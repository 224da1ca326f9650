//! Built-in desk-scale test scenes.
//!
//! The same images ship as PGM files under `assets/scenes/`; a test keeps the
//! two in sync.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::Result;
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scene {
    /// Binary letter-like glyph.
    Glyph,
    /// Grayscale gradient with a smooth periodic texture.
    Texture,
    /// Binary stripe-resolution target with shrinking periods.
    Stripes,
}

impl Scene {
    pub const ALL: [Scene; 3] = [Scene::Glyph, Scene::Texture, Scene::Stripes];
    pub const SIZE: usize = 64;

    pub fn name(self) -> &'static str {
        match self {
            Scene::Glyph => "glyph",
            Scene::Texture => "texture",
            Scene::Stripes => "stripes",
        }
    }

    pub fn from_name(name: &str) -> Option<Scene> {
        Scene::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Renders at 64x64, quantized to 8 bits so it matches the shipped PGM.
    pub fn image(self) -> Image {
        let img = self.render(Scene::SIZE, Scene::SIZE);
        Image::from_u8(img.height(), img.width(), &img.to_u8()).expect("shape preserved")
    }

    /// Renders at an arbitrary size; coordinates are resolution independent.
    pub fn render(self, height: usize, width: usize) -> Image {
        match self {
            Scene::Glyph => glyph(height, width),
            Scene::Texture => texture(height, width),
            Scene::Stripes => stripes(height, width),
        }
    }
}

fn unit(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

fn glyph(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |r, c| {
        let (y, x) = (unit(r, h), unit(c, w));
        // bowl of a "P": ring in the upper right
        let (dy, dx) = (y - 0.36, x - 0.55);
        let d = (dy * dy + dx * dx).sqrt();
        let bowl = (0.13..=0.24).contains(&d) && x >= 0.38;
        let stem = (0.22..=0.34).contains(&x) && (0.12..=0.88).contains(&y);
        let bar = (0.22..=0.55).contains(&x) && ((0.12..=0.23).contains(&y) || (0.49..=0.60).contains(&y));
        let dot = (x - 0.74).powi(2) + (y - 0.78).powi(2) <= 0.07f64.powi(2);
        if bowl || stem || bar || dot {
            1.0
        } else {
            0.0
        }
    })
}

fn texture(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |r, c| {
        let (y, x) = (unit(r, h), unit(c, w));
        let ramp = 0.15 + 0.45 * x + 0.15 * y;
        let wave = 0.18 * (2.0 * PI * 3.0 * y).sin() * (2.0 * PI * 2.5 * x + 1.0).cos();
        let blob = 0.3 * (-((x - 0.3).powi(2) + (y - 0.7).powi(2)) / 0.02).exp();
        (ramp + wave + blob).clamp(0.0, 1.0)
    })
}

fn stripes(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |r, c| {
        let (y, x) = (unit(r, h), unit(c, w));
        let inside = |lo: f64, hi: f64, v: f64| v >= lo && v < hi;
        // three groups of vertical bars with shrinking period, one horizontal group
        let groups = [(0.06, 0.34, 1.0 / 8.0), (0.38, 0.62, 1.0 / 12.0), (0.66, 0.94, 1.0 / 16.0)];
        for (x0, x1, period) in groups {
            if inside(x0, x1, x) && inside(0.08, 0.55, y) {
                return if ((x - x0) / period).fract() < 0.5 { 1.0 } else { 0.0 };
            }
        }
        if inside(0.62, 0.92, y) && inside(0.1, 0.9, x) {
            return if ((y - 0.62) / (1.0 / 10.0)).fract() < 0.5 { 1.0 } else { 0.0 };
        }
        0.0
    })
}

/// Resolves a scene argument: a built-in name or a path to a PGM file.
pub fn load_scene(spec: &str) -> Result<Image> {
    match Scene::from_name(spec) {
        Some(s) => Ok(s.image()),
        None => Image::read_pgm(Path::new(spec)),
    }
}
