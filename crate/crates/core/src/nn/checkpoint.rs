//! `EIUP` parameter files.
//!
//! Layout: magic `EIUP`, a `u8` format version, then one record per
//! parameter until end of file. A record is a `u16` path length, the UTF-8
//! path, a `u8` dtype (0 = f32, 1 = f64), a `u32` rank, `u32` dims, and the
//! row-major payload. All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Precision, Tensor};

pub const MAGIC: &[u8; 4] = b"EIUP";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl From<Precision> for Dtype {
    fn from(p: Precision) -> Self {
        match p {
            Precision::F32 => Dtype::F32,
            Precision::F64 => Dtype::F64,
        }
    }
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stream>", e)
}

pub fn write<W: Write>(store: &ParamStore, dtype: Dtype, mut w: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    for (_, name, t) in store.iter() {
        let name_len = u16::try_from(name.len()).map_err(|_| format_err(format!("parameter path too long: {name}")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(dtype as u8);
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match dtype {
            Dtype::F32 => {
                for &x in t.data() {
                    buf.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for &x in t.data() {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    w.write_all(&buf).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn read<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err)?;
    parse(&bytes)
}

pub fn save(store: &ParamStore, dtype: Dtype, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write(store, dtype, BufWriter::new(f)).map_err(|e| relabel(e, path))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read(BufReader::new(f)).map_err(|e| relabel(e, path))
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Overwrites every parameter of `target` with the same-named entry of
/// `source`. Both stores must hold exactly the same paths and shapes.
pub fn restore(target: &mut ParamStore, source: &ParamStore) -> Result<()> {
    if target.len() != source.len() {
        return Err(format_err(format!(
            "checkpoint holds {} parameters, model expects {}",
            source.len(),
            target.len()
        )));
    }
    for (_, name, value) in source.iter() {
        let id = target
            .lookup(name)
            .ok_or_else(|| format_err(format!("unexpected parameter {name} in checkpoint")))?;
        if target.get(id).shape() != value.shape() {
            return Err(format_err(format!(
                "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                value.shape(),
                target.get(id).shape()
            )));
        }
        target.set(id, value.clone())?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(format_err(format!("truncated {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn parse(bytes: &[u8]) -> Result<ParamStore> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic").map_err(|_| format_err("not an EIUP file"))?;
    if magic != MAGIC {
        return Err(format_err("not an EIUP file (bad magic)"));
    }
    let version = c.u8("version")?;
    if version != VERSION {
        return Err(format_err(format!("unsupported EIUP version {version}")));
    }
    let mut store = ParamStore::new();
    while !c.at_end() {
        let len = c.u16("path length")? as usize;
        let name = std::str::from_utf8(c.take(len, "path")?)
            .map_err(|_| format_err("parameter path is not UTF-8"))?
            .to_string();
        let dtype = match c.u8("dtype")? {
            0 => Dtype::F32,
            1 => Dtype::F64,
            d => return Err(format_err(format!("parameter {name}: unknown dtype {d}"))),
        };
        let ndim = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(c.u32("dims")? as usize);
        }
        let width = if dtype == Dtype::F32 { 4 } else { 8 };
        let bytes_needed = shape
            .iter()
            .try_fold(width, |acc: usize, &d| acc.checked_mul(d))
            .ok_or_else(|| format_err(format!("parameter {name}: shape {shape:?} too large")))?;
        let payload = c.take(bytes_needed, "payload")?;
        let data: Vec<f64> = match dtype {
            Dtype::F32 => payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        };
        let t = Tensor::new(&shape, data).map_err(|e| format_err(format!("parameter {name}: {e}")))?;
        store
            .insert(name.clone(), t)
            .map_err(|_| format_err(format!("parameter {name} appears twice")))?;
    }
    Ok(store)
}
