//! Binary field, ensemble and checkpoint files.
//!
//! All integers are `u32` and all reals `f64`, little-endian.
//!
//! ```text
//! field:      "RFL1" d dims[d] channels spacing[d] payload[len]
//! ensemble:   "RFE1" count d dims[d] channels spacing[d] payload[count * len]
//! checkpoint: "RFM1" kind n_meta meta[n_meta] n_weights weights[n_weights]
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Result, ReflowError};
use crate::field::{Ensemble, Field, Grid};

pub const FIELD_MAGIC: &[u8; 4] = b"RFL1";
pub const ENSEMBLE_MAGIC: &[u8; 4] = b"RFE1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFM1";

/// Raw checkpoint contents; model types map themselves onto this.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: u32,
    pub meta: Vec<u32>,
    pub weights: Vec<f64>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ReflowError::LengthMismatch {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self
            .take(4)
            .map_err(|_| ReflowError::CorruptHeader("file shorter than magic".into()))?;
        if got != want {
            return Err(ReflowError::CorruptHeader(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(ReflowError::LengthMismatch {
                expected: self.pos,
                found: self.buf.len(),
            });
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, x: usize) -> Result<()> {
    let v = u32::try_from(x).map_err(|_| ReflowError::InvalidParameter(format!("{x} overflows u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_grid(out: &mut Vec<u8>, g: &Grid) -> Result<()> {
    put_u32(out, g.ndim())?;
    for &n in g.dims() {
        put_u32(out, n)?;
    }
    put_u32(out, g.channels())?;
    put_f64s(out, g.spacing());
    Ok(())
}

fn read_grid(c: &mut Cursor) -> Result<Grid> {
    let hdr = |e: ReflowError| match e {
        ReflowError::LengthMismatch { .. } => ReflowError::CorruptHeader("truncated header".into()),
        e => e,
    };
    let d = c.u32().map_err(hdr)? as usize;
    if d == 0 || d > 8 {
        return Err(ReflowError::CorruptHeader(format!("implausible dimension {d}")));
    }
    let dims = (0..d)
        .map(|_| c.u32().map(|x| x as usize))
        .collect::<Result<Vec<_>>>()
        .map_err(hdr)?;
    let channels = c.u32().map_err(hdr)? as usize;
    let spacing = (0..d).map(|_| c.f64()).collect::<Result<Vec<_>>>().map_err(hdr)?;
    Grid::new(dims, spacing, channels).map_err(|e| ReflowError::CorruptHeader(e.to_string()))
}

pub fn encode_field(f: &Field) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(32 + 8 * f.values().len());
    out.extend_from_slice(FIELD_MAGIC);
    put_grid(&mut out, f.grid())?;
    put_f64s(&mut out, f.values());
    Ok(out)
}

pub fn decode_field(buf: &[u8]) -> Result<Field> {
    let mut c = Cursor::new(buf);
    c.magic(FIELD_MAGIC)?;
    let grid = Arc::new(read_grid(&mut c)?);
    let values = c.f64s(grid.len())?;
    c.expect_end()?;
    Field::new(grid, values)
}

pub fn encode_ensemble(e: &Ensemble) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(32 + 8 * e.len() * e.grid().len());
    out.extend_from_slice(ENSEMBLE_MAGIC);
    put_u32(&mut out, e.len())?;
    put_grid(&mut out, e.grid())?;
    for m in e.members() {
        put_f64s(&mut out, m.values());
    }
    Ok(out)
}

pub fn decode_ensemble(buf: &[u8]) -> Result<Ensemble> {
    let mut c = Cursor::new(buf);
    c.magic(ENSEMBLE_MAGIC)?;
    let count = c
        .u32()
        .map_err(|_| ReflowError::CorruptHeader("truncated header".into()))? as usize;
    let grid = Arc::new(read_grid(&mut c)?);
    let mut members = Vec::with_capacity(count);
    for _ in 0..count {
        members.push(Field::new(grid.clone(), c.f64s(grid.len())?)?);
    }
    c.expect_end()?;
    Ensemble::new(members)
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * ck.meta.len() + 8 * ck.weights.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, ck.kind as usize)?;
    put_u32(&mut out, ck.meta.len())?;
    for &m in &ck.meta {
        put_u32(&mut out, m as usize)?;
    }
    put_u32(&mut out, ck.weights.len())?;
    put_f64s(&mut out, &ck.weights);
    Ok(out)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor::new(buf);
    c.magic(CHECKPOINT_MAGIC)?;
    let hdr = |_| ReflowError::CorruptHeader("truncated checkpoint header".into());
    let kind = c.u32().map_err(hdr)?;
    let n_meta = c.u32().map_err(hdr)? as usize;
    let meta = (0..n_meta).map(|_| c.u32()).collect::<Result<Vec<_>>>().map_err(hdr)?;
    let n_weights = c.u32().map_err(hdr)? as usize;
    let weights = c.f64s(n_weights)?;
    c.expect_end()?;
    Ok(Checkpoint { kind, meta, weights })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

pub fn write_field(path: &Path, f: &Field) -> Result<()> {
    write_bytes(path, &encode_field(f)?)
}

pub fn read_field(path: &Path) -> Result<Field> {
    decode_field(&read_bytes(path)?)
}

pub fn write_ensemble(path: &Path, e: &Ensemble) -> Result<()> {
    write_bytes(path, &encode_ensemble(e)?)
}

pub fn read_ensemble(path: &Path) -> Result<Ensemble> {
    decode_ensemble(&read_bytes(path)?)
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_bytes(path, &encode_checkpoint(ck)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_bytes(path)?)
}
