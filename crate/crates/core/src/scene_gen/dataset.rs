//! `SFSB` dataset container.
//!
//! Little-endian: `"SFSB"`, `u8` version, `u32` scene count, then per scene
//! `u64` seed, `u8` mechanism, `u32 n1`, `u32 n2`, and binary32 arrays
//! `frame1 (n1 x 3)`, `frame2 (n2 x 3)`, `flow (n1 x 3)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{FlowField, Mechanism, PointCloud, ScenePair, Vec3};

pub const MAGIC: [u8; 4] = *b"SFSB";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 9;

/// Serializes scenes after rounding them to binary32 (see
/// [`ScenePair::quantized`]).
pub fn encode_dataset(scenes: &[ScenePair]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(scenes.len() as u32).to_le_bytes());
    for scene in scenes {
        let q = scene.quantized();
        out.extend_from_slice(&q.seed.to_le_bytes());
        out.push(q.mechanism.code());
        out.extend_from_slice(&(q.frame1.len() as u32).to_le_bytes());
        out.extend_from_slice(&(q.frame2.len() as u32).to_le_bytes());
        for rows in [q.frame1.points(), q.frame2.points(), q.flow.vectors()] {
            for v in rows.iter().flatten() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn rows(&mut self, n: usize, what: &str) -> Result<Vec<Vec3>> {
        let bytes = self.take(n * 12, what)?;
        Ok(bytes
            .chunks_exact(12)
            .map(|c| {
                let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap()) as f64;
                [f(0), f(1), f(2)]
            })
            .collect())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<ScenePair>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return r.fail("bad magic, expected \"SFSB\"");
    }
    let version = r.u8("version")?;
    if version != VERSION {
        r.pos -= 1;
        return r.fail(format!("unsupported version {version}"));
    }
    let count = r.u32("scene count")? as usize;
    let mut scenes = Vec::with_capacity(count.min(1 << 16));
    for k in 0..count {
        let start = r.pos;
        let seed = r.u64("seed")?;
        let code = r.u8("mechanism")?;
        let Some(mechanism) = Mechanism::from_code(code) else {
            r.pos -= 1;
            return r.fail(format!("scene {k}: unknown mechanism code {code}"));
        };
        let n1 = r.u32("frame1 size")? as usize;
        let n2 = r.u32("frame2 size")? as usize;
        let frame1 = r.rows(n1, "frame1")?;
        let frame2 = r.rows(n2, "frame2")?;
        let flow = r.rows(n1, "flow")?;
        let pair = PointCloud::new(frame1)
            .and_then(|f1| Ok((f1, PointCloud::new(frame2)?, FlowField::new(flow)?)))
            .and_then(|(f1, f2, fl)| ScenePair::new(f1, f2, fl, mechanism, seed));
        match pair {
            Ok(p) => scenes.push(p),
            Err(e) => {
                r.pos = start;
                return r.fail(format!("scene {k}: {e}"));
            }
        }
    }
    if r.pos != bytes.len() {
        return r.fail(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(scenes)
}

pub fn write_dataset(path: impl AsRef<Path>, scenes: &[ScenePair]) -> Result<()> {
    fs::write(path, encode_dataset(scenes))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<ScenePair>> {
    decode_dataset(&fs::read(path)?)
}
