//! Versioned little-endian binary format for generator snapshots.
//!
//! ```text
//! magic "MGNTCKPT" | version u32 | model count u32 | models...
//! model: latent u32 | batch u32 | segments u32 | (offset u32, card u32)*
//!        | layers u32 | (n_in u32, n_out u32, weight f64*, bias f64*)*
//!        | z f64 * (batch * latent)
//! ```
//!
//! A synth run stores two models: the final generator and the one that
//! scored candidates in the last selection round.

use std::path::Path;

use margnet_core::generator::{Dense, GeneratorModel, Segment};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 8] = b"MGNTCKPT";
pub const VERSION: u32 = 1;

pub fn encode(models: &[&GeneratorModel]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, models.len() as u32);
    for m in models {
        put_u32(&mut out, m.latent_dim as u32);
        put_u32(&mut out, m.batch_size as u32);
        put_u32(&mut out, m.segments.len() as u32);
        for s in &m.segments {
            put_u32(&mut out, s.offset as u32);
            put_u32(&mut out, s.card as u32);
        }
        put_u32(&mut out, m.layers.len() as u32);
        for l in &m.layers {
            put_u32(&mut out, l.n_in as u32);
            put_u32(&mut out, l.n_out as u32);
            l.weight.iter().chain(&l.bias).for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
        m.z.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::BadCheckpoint("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::BadCheckpoint("checkpoint is truncated".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<GeneratorModel>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadCheckpoint("not a margnet checkpoint (bad magic header)".into()));
    }
    let mut c = Cursor { bytes, pos: MAGIC.len() };
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(Error::BadCheckpoint(format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32()?;
    let mut models = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let latent_dim = c.u32()?;
        let batch_size = c.u32()?;
        let segments = (0..c.u32()?)
            .map(|_| Ok(Segment { offset: c.u32()?, card: c.u32()? }))
            .collect::<Result<Vec<_>>>()?;
        let n_layers = c.u32()?;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let (n_in, n_out) = (c.u32()?, c.u32()?);
            let weight = c.f64s(n_in * n_out)?;
            let bias = c.f64s(n_out)?;
            layers.push(Dense { n_in, n_out, weight, bias });
        }
        let z = c.f64s(batch_size * latent_dim)?;
        let model = GeneratorModel { layers, segments, latent_dim, batch_size, z };
        check_shapes(&model)?;
        models.push(model);
    }
    if c.pos != bytes.len() {
        return Err(Error::BadCheckpoint("trailing bytes after the last model".into()));
    }
    Ok(models)
}

fn check_shapes(m: &GeneratorModel) -> Result<()> {
    let mut width = m.latent_dim;
    for l in &m.layers {
        if l.n_in != width {
            return Err(Error::BadCheckpoint("layer shapes do not chain".into()));
        }
        width = l.n_out;
    }
    let mut offset = 0;
    for s in &m.segments {
        if s.offset != offset || s.card == 0 {
            return Err(Error::BadCheckpoint("output segments are not contiguous".into()));
        }
        offset += s.card;
    }
    if m.layers.is_empty() || offset != width {
        return Err(Error::BadCheckpoint("output width does not match the segments".into()));
    }
    Ok(())
}

pub fn save(path: &Path, models: &[&GeneratorModel]) -> Result<()> {
    write_atomic(path, &encode(models))
}

pub fn load(path: &Path) -> Result<Vec<GeneratorModel>> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
