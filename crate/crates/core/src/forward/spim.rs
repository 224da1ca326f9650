//! SPIM measurement files (little-endian).
//!
//! ```text
//! "SPIM"  version:u8  flags:u8  H:u32  W:u32  N_M:u32  encoding:u8
//! patterns      encoding 0: packed bits, each row padded to a byte, LSB first
//!               encoding 1: f32 per entry
//! values        N_M x f64
//! noise         gaussian_sigma:f64  poisson_scale:f64  applied_sigma:f64  seed:u64
//! [pattern seed:u64]   present when flags bit 2 is set
//! ```
//!
//! Flags bits 0-1 hold the pattern kind.

use std::fs;
use std::path::Path;

use super::{MeasurementMatrix, MeasurementVector, NoiseSpec, PatternKind};
use crate::error::{Result, SpiError};

pub const SPIM_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"SPIM";
const FLAG_KIND_MASK: u8 = 0b11;
const FLAG_SEED: u8 = 0b100;
const ENC_BITS: u8 = 0;
const ENC_F32: u8 = 1;

pub fn write_spim(m: &MeasurementMatrix, y: &MeasurementVector) -> Result<Vec<u8>> {
    if y.len() != m.n_meas() {
        return Err(SpiError::SizeMismatch { what: "measurement count", expected: m.n_meas().to_string(), got: y.len().to_string() });
    }
    let dims = [m.height, m.width, m.n_meas()];
    if dims.iter().any(|&d| d > u32::MAX as usize) {
        return Err(SpiError::invalid("dimension exceeds u32"));
    }
    let n_pix = m.n_pix();
    let binary = m.is_binary();
    let body = if binary { m.n_meas() * n_pix.div_ceil(8) } else { m.data().len() * 4 };
    let mut out = Vec::with_capacity(64 + body + 8 * y.len());
    out.extend_from_slice(MAGIC);
    out.push(SPIM_VERSION);
    out.push(m.kind.code() | FLAG_SEED);
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(if binary { ENC_BITS } else { ENC_F32 });
    if binary {
        for row in m.rows() {
            for chunk in row.chunks(8) {
                out.push(chunk.iter().enumerate().fold(0u8, |acc, (b, &v)| acc | (u8::from(v == 1.0) << b)));
            }
        }
    } else {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in &y.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [y.noise.gaussian_sigma, y.noise.poisson_scale, y.applied_sigma] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&y.noise.seed.to_le_bytes());
    out.extend_from_slice(&m.seed.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let rest = self.bytes.len() - self.pos;
        if rest < n {
            return Err(SpiError::Truncated { format: "SPIM", offset: self.pos as u64, needed: n - rest });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn corrupt(&self, at: usize, reason: impl Into<String>) -> SpiError {
        SpiError::Corrupt { format: "SPIM", offset: at as u64, reason: reason.into() }
    }
}

pub fn read_spim(bytes: &[u8]) -> Result<(MeasurementMatrix, MeasurementVector)> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(SpiError::BadMagic { format: "SPIM", offset: 0 });
    }
    r.pos = 4;
    let version = r.u8()?;
    if version != SPIM_VERSION {
        return Err(SpiError::UnsupportedVersion { format: "SPIM", version, offset: 4 });
    }
    let flags = r.u8()?;
    let kind = PatternKind::from_code(flags & FLAG_KIND_MASK).ok_or_else(|| r.corrupt(5, format!("unknown pattern kind in flags {flags:#04x}")))?;
    if flags & !(FLAG_KIND_MASK | FLAG_SEED) != 0 {
        return Err(r.corrupt(5, format!("reserved flag bits set in {flags:#04x}")));
    }
    let (height, width, n_meas) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if height == 0 || width == 0 || n_meas == 0 {
        return Err(r.corrupt(6, format!("empty dimensions {height}x{width}, N_M {n_meas}")));
    }
    let n_pix = height.checked_mul(width).ok_or_else(|| r.corrupt(6, "H*W overflows"))?;
    let enc_at = r.pos;
    let encoding = r.u8()?;
    let total = n_pix.checked_mul(n_meas).ok_or_else(|| r.corrupt(6, "pattern size overflows"))?;
    let patterns: Vec<f32> = match encoding {
        ENC_BITS => {
            let row_bytes = n_pix.div_ceil(8);
            let raw = r.take(row_bytes.checked_mul(n_meas).ok_or_else(|| r.corrupt(enc_at, "pattern size overflows"))?)?;
            let mut p = Vec::with_capacity(total);
            for row in raw.chunks_exact(row_bytes) {
                p.extend((0..n_pix).map(|i| ((row[i / 8] >> (i % 8)) & 1) as f32));
            }
            p
        }
        ENC_F32 => {
            let at = r.pos;
            let raw = r.take(total.checked_mul(4).ok_or_else(|| r.corrupt(enc_at, "pattern size overflows"))?)?;
            let p: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            if let Some(i) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(r.corrupt(at + 4 * i, format!("pattern entry {} outside [0, 1]", p[i])));
            }
            p
        }
        e => return Err(r.corrupt(enc_at, format!("unknown pattern encoding {e}"))),
    };
    let values_at = r.pos;
    let values: Vec<f64> = (0..n_meas).map(|_| r.f64()).collect::<Result<_>>()?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(r.corrupt(values_at + 8 * i, "non-finite measurement"));
    }
    let noise_at = r.pos;
    let (gaussian_sigma, poisson_scale, applied_sigma) = (r.f64()?, r.f64()?, r.f64()?);
    let noise_seed = r.u64()?;
    let noise = NoiseSpec { gaussian_sigma, poisson_scale, seed: noise_seed };
    noise.validate().map_err(|e| r.corrupt(noise_at, e.to_string()))?;
    let seed = if flags & FLAG_SEED != 0 { r.u64()? } else { 0 };
    if r.pos != bytes.len() {
        return Err(r.corrupt(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let m = MeasurementMatrix::from_rows(kind, height, width, seed, patterns)?;
    Ok((m, MeasurementVector { values, noise, applied_sigma }))
}

pub fn save_measurements(path: impl AsRef<Path>, m: &MeasurementMatrix, y: &MeasurementVector) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_spim(m, y)?).map_err(|e| SpiError::io(path, e))
}

pub fn load_measurements(path: impl AsRef<Path>) -> Result<(MeasurementMatrix, MeasurementVector)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SpiError::io(path, e))?;
    read_spim(&bytes)
}
