//! SFNP parameter files: `"SFNP"`, a version byte, a u32 array count, then
//! the named arrays. Each array is a u16 name length, the UTF-8 name, a u8
//! rank, u32 dims and binary64 values, all little-endian. The count makes a
//! file cut at an array boundary detectable.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SFNP";
pub const VERSION: u8 = 1;

pub fn encode_arrays(arrays: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, t) in arrays {
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(2);
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(fmt_err(self.pos, format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn fmt_err(offset: usize, message: String) -> Error {
    Error::Format {
        offset: offset as u64,
        message,
    }
}

/// Parses a whole file; nothing is returned unless every array is intact.
pub fn decode_arrays(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(fmt_err(0, "bad magic, expected SFNP".into()));
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(fmt_err(4, format!("unsupported version {version}")));
    }
    let expected = r.u32("array count")? as usize;
    let mut arrays = Vec::new();
    while arrays.len() < expected {
        let start = r.pos;
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| fmt_err(start + 2, "array name is not UTF-8".into()))?
            .to_string();
        let rank_at = r.pos;
        let rank = r.take(1, "rank")?[0];
        let dims: Vec<usize> = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<_>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [a, b] => (*a, *b),
            _ => return Err(fmt_err(rank_at, format!("unsupported rank {rank}"))),
        };
        let count = rows
            .checked_mul(cols)
            .filter(|c| c.checked_mul(8).is_some())
            .ok_or_else(|| fmt_err(rank_at, "array too large".into()))?;
        let data_at = r.pos;
        let raw = r.take(count * 8, "array data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(rows, cols, data)
            .map_err(|_| fmt_err(data_at, format!("array {name} has non-finite values")))?;
        if arrays.iter().any(|(n, _): &(String, Tensor)| *n == name) {
            return Err(fmt_err(start, format!("duplicate array {name}")));
        }
        arrays.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(fmt_err(r.pos, "trailing bytes after the last array".into()));
    }
    Ok(arrays)
}

pub fn write_arrays(path: impl AsRef<Path>, arrays: &[(String, &Tensor)]) -> Result<()> {
    std::fs::write(path, encode_arrays(arrays))?;
    Ok(())
}

pub fn read_arrays(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    decode_arrays(&std::fs::read(path)?)
}
