//! Parameter checkpoints.
//!
//! Layout (little-endian): magic `CPLP`, `u32` version, `u32` count, then per
//! parameter: `u16` name length, UTF-8 name, `u8` rank, `u32` per dimension,
//! `f32` payload in row-major order.

use std::path::Path;

use super::params::ParamSet;
use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"CPLP";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + params.num_scalars() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &p.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or_else(|| {
            FormatError::DimensionOverflow(format!("{n} bytes at offset {}", self.pos))
        })?;
        if end > self.buf.len() {
            return Err(FormatError::Truncated {
                expected: end,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet<f32>, FormatError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(FormatError::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let count = cur.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| FormatError::Malformed(format!("parameter name: {e}")))?
            .to_string();
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = cur.u32()? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| FormatError::DimensionOverflow(format!("parameter {name}")))?;
            shape.push(d);
        }
        let bytes_needed = numel
            .checked_mul(4)
            .ok_or_else(|| FormatError::DimensionOverflow(format!("parameter {name}")))?;
        let payload = cur.take(bytes_needed)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if params.find(&name).is_some() {
            return Err(FormatError::Malformed(format!(
                "duplicate parameter {name}"
            )));
        }
        params.add(name, shape, values);
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ParamSet<f32>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| Error::format(path, e))
}
