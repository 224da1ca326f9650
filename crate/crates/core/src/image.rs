//! Grayscale images in `[0, 1]` and binary PGM (P5) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Result, SpiError};

/// Row-major grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(SpiError::SizeMismatch {
                what: "image data",
                expected: format!("{height}x{width} = {} values", height * width),
                got: data.len().to_string(),
            });
        }
        Ok(Image { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image { height, width, data: vec![0.0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Image { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.width + c] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(SpiError::SizeMismatch {
                what,
                expected: format!("{}x{}", self.height, self.width),
                got: format!("{}x{}", other.height, other.width),
            })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Linear rescale to `[0, 1]`; a constant image maps to zeros.
    pub fn normalized(&self) -> Image {
        let (lo, hi) = self.min_max();
        if hi > lo {
            self.map(|v| (v - lo) / (hi - lo))
        } else {
            Image::zeros(self.height, self.width)
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Pixels quantized to 8 bits the way [`Image::write_pgm`] stores them.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Image> {
        Image::new(height, width, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    /// Encodes as binary PGM (P5, maxval 255).
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_u8());
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm_bytes()).map_err(|e| SpiError::io(path, e))
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| SpiError::io(path, e))?;
        Image::from_pgm_bytes(&bytes)
    }

    /// Decodes P5 (8 or 16 bit) and P2 PGM, mapping `[0, maxval]` to `[0, 1]`.
    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Image> {
        let mut hdr = PgmHeader { bytes, pos: 0 };
        let magic = hdr.token()?;
        let ascii = match magic.as_str() {
            "P5" => false,
            "P2" => true,
            _ => return Err(SpiError::BadMagic { format: "PGM", offset: 0 }),
        };
        let width = hdr.number()?;
        let height = hdr.number()?;
        let maxval = hdr.number()?;
        if maxval == 0 || maxval > 65535 {
            return Err(SpiError::Corrupt { format: "PGM", offset: hdr.pos as u64, reason: format!("maxval {maxval}") });
        }
        let n = width * height;
        let scale = maxval as f64;
        let data: Vec<f64> = if ascii {
            (0..n).map(|_| hdr.number().map(|v| v as f64 / scale)).collect::<Result<_>>()?
        } else {
            // exactly one whitespace byte separates the header from the raster
            let start = hdr.pos + 1;
            let bpp = if maxval < 256 { 1 } else { 2 };
            let need = n * bpp;
            let raster = bytes.get(start..start + need).ok_or(SpiError::Truncated {
                format: "PGM",
                offset: start as u64,
                needed: need.saturating_sub(bytes.len().saturating_sub(start)),
            })?;
            if bpp == 1 {
                raster.iter().map(|&b| b as f64 / scale).collect()
            } else {
                raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale).collect()
            }
        };
        for (i, v) in data.iter().enumerate() {
            if *v > 1.0 {
                return Err(SpiError::Corrupt { format: "PGM", offset: i as u64, reason: "sample exceeds maxval".into() });
            }
        }
        Image::new(height, width, data)
    }
}

struct PgmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmHeader<'_> {
    fn token(&mut self) -> Result<String> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while !matches!(self.bytes.get(self.pos), Some(b'\n') | None) {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(SpiError::Truncated { format: "PGM", offset: self.pos as u64, needed: 1 }),
            }
        }
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(b) if !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize> {
        let at = self.pos;
        let t = self.token()?;
        t.parse()
            .map_err(|_| SpiError::Corrupt { format: "PGM", offset: at as u64, reason: format!("expected a number, got '{t}'") })
    }
}

/// Tiles images left to right, top to bottom with a one-pixel white gutter.
pub fn montage(images: &[Image], columns: usize) -> Option<Image> {
    let first = images.first()?;
    let (h, w) = (first.height, first.width);
    let cols = columns.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let mut out = Image::from_fn(rows * (h + 1) - 1, cols * (w + 1) - 1, |_, _| 1.0);
    for (i, img) in images.iter().enumerate() {
        let (r0, c0) = ((i / cols) * (h + 1), (i % cols) * (w + 1));
        for r in 0..h.min(img.height) {
            for c in 0..w.min(img.width) {
                out.set(r0 + r, c0 + c, img.get(r, c).clamp(0.0, 1.0));
            }
        }
    }
    Some(out)
}
