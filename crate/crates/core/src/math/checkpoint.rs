//! `rosmo-ckpt-v1` parameter archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "rosmo-ckpt-v1\n"
//! u32 entry count
//! per entry: u32 name length, name bytes (UTF-8), u32 rank, rank × u32 extents,
//!            product(extents) × f32 payload
//! u32 CRC32 of everything after the version line
//! ```

use std::fs;
use std::path::Path;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "rosmo-ckpt-v1";

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            body.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            body.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&body);
    let mut out = Vec::with_capacity(body.len() + 32);
    out.extend_from_slice(CHECKPOINT_VERSION.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Corrupt("missing version line".into()))?;
    let version = String::from_utf8_lossy(&bytes[..newline]).into_owned();
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION.into(),
            found: version,
        });
    }
    let rest = &bytes[newline + 1..];
    if rest.len() < 8 {
        return Err(Error::Corrupt("checkpoint truncated".into()));
    }
    let (body, crc_bytes) = rest.split_at(rest.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 0 };
    let count = r.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(name, Tensor::new(shape, data)?);
    }
    if r.pos != body.len() {
        return Err(Error::Corrupt("trailing bytes after last tensor".into()));
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) struct Reader<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corrupt(format!(
                "truncated: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
