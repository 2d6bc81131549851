//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "NDVCKPT1"
//! config hash 32 bytes  SHA-256 of the resolved run config
//! step         u64
//! format       u8 exponent bits, u8 mantissa bits
//! loss         f64
//! tensors      u32 count, then per tensor: u16 name length, name bytes, u32 rows, u32 cols
//! data         f64 values, tensors in header order, each row-major
//! ```

use std::path::Path;

use super::model::ToyModel;
use super::Checkpoint;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::numerics::FloatFormat;

const MAGIC: &[u8; 8] = b"NDVCKPT1";

pub fn encode(ckpt: &Checkpoint, config_hash: &[u8; 32]) -> Vec<u8> {
    let tensors = ckpt.model.tensors();
    let fmt = tensors[0].1.format();
    let mut out = Vec::with_capacity(64 + ckpt.model.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(config_hash);
    out.extend_from_slice(&(ckpt.step as u64).to_le_bytes());
    out.push(fmt.exponent_bits() as u8);
    out.push(fmt.mantissa_bits() as u8);
    out.extend_from_slice(&ckpt.loss.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in &tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    }
    for (_, m) in &tensors {
        for x in m.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

/// Decodes a container, returning the embedded config hash and the checkpoint.
pub fn decode(buf: &[u8]) -> Result<([u8; 32], Checkpoint)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let hash: [u8; 32] = r.array()?;
    let step = r.u64()? as usize;
    let [e, m] = r.array::<2>()?;
    let fmt = FloatFormat::new(e as u32, m as u32)
        .map_err(|err| Error::Checkpoint(format!("bad format: {err}")))?;
    let loss = r.f64()?;
    let count = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        shapes.push((name, rows, cols));
    }
    let mut tensors = Vec::with_capacity(shapes.len());
    for (name, rows, cols) in shapes {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
        if n > (buf.len() - r.pos) / 8 {
            return Err(Error::Checkpoint(format!("truncated data for {name}")));
        }
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push((name, Matrix::from_vec(rows, cols, data, fmt)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let model = ToyModel::from_tensors(tensors)?;
    Ok((hash, Checkpoint { step, model, loss }))
}

pub fn write(path: &Path, ckpt: &Checkpoint, config_hash: &[u8; 32]) -> Result<()> {
    std::fs::write(path, encode(ckpt, config_hash)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<([u8; 32], Checkpoint)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
