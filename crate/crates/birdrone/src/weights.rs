//! Binary weight files: `BDRN1`, a `u32` layer count, then per layer the
//! name length and bytes, rank, dims and `f32` values, all little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use birdrone_core::detect::Detector;
use birdrone_core::nn::Params;
use birdrone_core::{Real, Shape, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"BDRN1";

pub fn encode<T: Real>(params: &Params<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.total() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let dims = t.shape().dims();
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or("truncated weight file")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> std::result::Result<Params<f32>, String> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return Err("not a BDRN1 weight file".into());
    }
    let layers = c.u32()?;
    let mut params = Params::new();
    for _ in 0..layers {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| "layer name is not UTF-8")?.to_string();
        let rank = c.u32()? as usize;
        if !(1..=4).contains(&rank) {
            return Err(format!("layer {name} has rank {rank}"));
        }
        let mut dims = [1usize; 4];
        for d in &mut dims[4 - rank..] {
            *d = c.u32()? as usize;
        }
        let shape = Shape::from_dims(dims);
        let bytes = c.take(shape.numel().checked_mul(4).ok_or("layer too large")?)?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        params.push(name, Tensor::new(shape, data).map_err(|e| e.to_string())?);
    }
    if c.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - c.pos));
    }
    Ok(params)
}

pub fn save<T: Real>(path: &Path, params: &Params<T>) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Params<f32>> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|r| Error::format(path, r))
}

/// Loads weights and rebuilds the matching detector; a census that does not
/// describe a known architecture is reported against the file.
pub fn load_detector(path: &Path, image_size: usize) -> Result<Detector<f32>> {
    let params = load(path)?;
    Detector::from_params(params, image_size).map_err(|e| Error::format(path, format!("weight/architecture mismatch: {e}")))
}
