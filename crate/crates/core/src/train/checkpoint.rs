//! SSTA model checkpoints (little-endian).
//!
//! ```text
//! "SSTA"  version:u8  header_len:u32  header:JSON  count:u32
//! count x { name_len:u16  name:utf8  ndim:u8  dims:u32 x ndim  values }
//! ```
//!
//! Values are f32 for 32-bit models and f64 for 64-bit models (the header's
//! `dtype`). Entries are the parameters (`param/<name>`), the Adam moments
//! (`adam.m/<name>`, `adam.v/<name>`) and the network input (`input`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spi_engine::{AdamState, Real, Tensor};

use crate::arch::{BlockHyper, SistaModel, ThresholdBounds, Variant};
use crate::error::{Result, SpiError};

pub const SSTA_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"SSTA";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub height: usize,
    pub width: usize,
    pub hyper: BlockHyper,
    pub bounds: ThresholdBounds,
    pub variant: Variant,
    pub init_seed: u64,
    pub adam_step: u64,
    pub adam_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Free-form run metadata (the resolved experiment config).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub model: SistaModel<T>,
    pub adam: AdamState<T>,
}

fn put_tensor<T: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) -> Result<()> {
    let name_len = u16::try_from(name.len()).map_err(|_| SpiError::invalid(format!("tensor name too long: {name}")))?;
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(u8::try_from(t.shape().len()).map_err(|_| SpiError::invalid("tensor rank exceeds 255"))?);
    for &d in t.shape() {
        out.extend_from_slice(&u32::try_from(d).map_err(|_| SpiError::invalid("dimension exceeds u32"))?.to_le_bytes());
    }
    let wide = T::NAME == "f64";
    for v in t.data() {
        let v = v.to_f64_lossless();
        if wide {
            out.extend_from_slice(&v.to_le_bytes());
        } else {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(())
}

pub fn write_checkpoint<T: Real>(model: &SistaModel<T>, adam: &AdamState<T>, extra: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        dtype: T::NAME.to_string(),
        height: model.height(),
        width: model.width(),
        hyper: model.hyper.clone(),
        bounds: model.bounds,
        variant: model.variant,
        init_seed: model.init_seed,
        adam_step: adam.step_count,
        adam_lr: adam.lr,
        beta1: adam.beta1,
        beta2: adam.beta2,
        eps: adam.eps,
        extra,
    };
    let json = serde_json::to_vec(&header).map_err(|e| SpiError::invalid(format!("header: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(SSTA_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let n = model.params.len();
    out.extend_from_slice(&((3 * n + 1) as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        put_tensor(&mut out, &format!("param/{name}"), t)?;
    }
    for (prefix, moments) in [("adam.m", &adam.first_moment), ("adam.v", &adam.second_moment)] {
        for ((name, _), t) in model.params.iter().zip(moments.iter()) {
            put_tensor(&mut out, &format!("{prefix}/{name}"), t)?;
        }
    }
    put_tensor(&mut out, "input", model.input())?;
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
            return Err(SpiError::Truncated { format: "SSTA", offset: self.pos as u64, needed: n - rest });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn corrupt(&self, at: usize, reason: impl Into<String>) -> SpiError {
        SpiError::Corrupt { format: "SSTA", offset: at as u64, reason: reason.into() }
    }

    fn tensor<T: Real>(&mut self, wide: bool) -> Result<(String, Tensor<T>)> {
        let at = self.pos;
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(self.take(len)?).map_err(|_| self.corrupt(at + 2, "tensor name is not UTF-8"))?.to_string();
        let ndim = self.take(1)?[0] as usize;
        let shape: Vec<usize> = (0..ndim).map(|_| self.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| self.corrupt(at, "tensor size overflows"))?;
        let width = if wide { 8 } else { 4 };
        let raw = self.take(n.checked_mul(width).ok_or_else(|| self.corrupt(at, "tensor size overflows"))?)?;
        let values: Vec<T> = if wide {
            raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect()
        } else {
            raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)).collect()
        };
        Ok((name, Tensor::new(shape, values)?))
    }
}

/// Restores a checkpoint into element type `T`; values are converted if the
/// file was written at the other precision.
pub fn read_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(SpiError::BadMagic { format: "SSTA", offset: 0 });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.take(1)?[0];
    if version != SSTA_VERSION {
        return Err(SpiError::UnsupportedVersion { format: "SSTA", version, offset: 4 });
    }
    let header_len = r.u32()? as usize;
    let header_at = r.pos;
    let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?).map_err(|e| r.corrupt(header_at, format!("header: {e}")))?;
    let wide = match header.dtype.as_str() {
        "f64" => true,
        "f32" => false,
        d => return Err(r.corrupt(header_at, format!("unknown dtype {d}"))),
    };
    let mut model = SistaModel::<T>::new(header.height, header.width, &header.hyper, header.bounds, header.variant, header.init_seed)
        .map_err(|e| r.corrupt(header_at, e.to_string()))?;
    let n = model.params.len();
    let count_at = r.pos;
    let count = r.u32()? as usize;
    if count != 3 * n + 1 {
        return Err(r.corrupt(count_at, format!("expected {} tensors for this architecture, found {count}", 3 * n + 1)));
    }
    let mut adam = AdamState::with_betas(&model.params, header.adam_lr, header.beta1, header.beta2, header.eps);
    adam.step_count = header.adam_step;
    let ids: Vec<_> = model.params.ids().collect();
    for i in 0..3 * n {
        let at = r.pos;
        let (name, t) = r.tensor::<T>(wide)?;
        let (j, id) = (i % n, ids[i % n]);
        let (expected, slot) = match i / n {
            0 => (format!("param/{}", model.params.name(id)), model.params.get_mut(id)),
            1 => (format!("adam.m/{}", model.params.name(id)), &mut adam.first_moment[j]),
            _ => (format!("adam.v/{}", model.params.name(id)), &mut adam.second_moment[j]),
        };
        if name != expected {
            return Err(r.corrupt(at, format!("expected tensor '{expected}', found '{name}'")));
        }
        if t.shape() != slot.shape() {
            return Err(r.corrupt(at, format!("tensor '{name}' has shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = t;
    }
    let at = r.pos;
    let (name, t) = r.tensor::<T>(wide)?;
    if name != "input" {
        return Err(r.corrupt(at, format!("expected tensor 'input', found '{name}'")));
    }
    model.set_input(t).map_err(|e| r.corrupt(at, e.to_string()))?;
    if r.pos != bytes.len() {
        return Err(r.corrupt(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { header, model, adam })
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, model: &SistaModel<T>, adam: &AdamState<T>, extra: serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(model, adam, extra)?).map_err(|e| SpiError::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SpiError::io(path, e))?;
    read_checkpoint(&bytes)
}
