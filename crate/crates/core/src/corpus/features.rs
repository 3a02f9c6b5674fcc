//! `EIUF` feature matrices.
//!
//! Layout: magic `EIUF`, `u8` version (1), `u8` dtype (0 = f32), `u32` rank,
//! `u32` dims, then the row-major little-endian payload. Values are stored
//! as f32, so a tensor round-trips exactly when its values are
//! f32-representable.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EIUF";
pub const VERSION: u8 = 1;
pub const EXTENSION: &str = "eiuf";
const DTYPE_F32: u8 = 0;

fn format_err(msg: String) -> Error {
    Error::Format(msg)
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(10 + 4 * t.shape().len() + 4 * t.numel());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(DTYPE_F32);
    buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in t.data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(format_err("not an EIUF file (bad magic)".into()));
    }
    if bytes[4] != VERSION {
        return Err(format_err(format!("unsupported EIUF version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(format_err(format!("unsupported EIUF dtype {}", bytes[5])));
    }
    let ndim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header = 10usize
        .checked_add(ndim.checked_mul(4).ok_or_else(|| format_err("rank overflow".into()))?)
        .ok_or_else(|| format_err("rank overflow".into()))?;
    if bytes.len() < header {
        return Err(format_err(format!("truncated EIUF header ({ndim} dims)")));
    }
    let shape: Vec<usize> = bytes[10..header]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    let expected = shape
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(format!("shape {shape:?} too large")))?;
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(format_err(format!(
            "EIUF payload is {} bytes, shape {shape:?} needs {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(&shape, data).map_err(|e| format_err(e.to_string()))
}

pub fn write_feature_file(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// File name of an utterance's features inside a modality folder.
pub fn file_name(dia_no: u32, utt_no: u32) -> String {
    format!("dia_{dia_no}_utt_{utt_no}.{EXTENSION}")
}
