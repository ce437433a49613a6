//! Columnar binary path dumps.
//!
//! A dump is a sequence of records, one per path:
//!
//! ```text
//! b"PENALPTH"
//! u64 model tag (0 brownian, 1 stable, 2 langevin)
//! f64 Δ, f64 T, f64 ε (NaN when no bandwidth is used)
//! u64 seed, u64 stream, u64 number of points
//! 3 columns of f64, then one byte per point for the zero-touch flag
//! ```
//!
//! All numbers are little-endian.

use std::io::{self, Read, Write};

use crate::paths::PathSample;
use crate::state::Model;

pub const MAGIC: &[u8; 8] = b"PENALPTH";

pub fn write_path<W: Write>(w: &mut W, p: &PathSample) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(p.model.tag() as u64).to_le_bytes())?;
    w.write_all(&p.dt.to_le_bytes())?;
    w.write_all(&p.horizon().to_le_bytes())?;
    w.write_all(&p.bandwidth.unwrap_or(f64::NAN).to_le_bytes())?;
    w.write_all(&p.seed.to_le_bytes())?;
    w.write_all(&p.stream.to_le_bytes())?;
    w.write_all(&(p.len() as u64).to_le_bytes())?;
    for c in &p.columns {
        for v in c {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let touch: Vec<u8> = p.zero_touch.iter().map(|b| *b as u8).collect();
    w.write_all(&touch)
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn u64_at<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn f64_at<R: Read>(r: &mut R) -> io::Result<f64> {
    Ok(f64::from_bits(u64_at(r)?))
}

/// Reads the next record, or `None` at a clean end of input.
pub fn read_path<R: Read>(r: &mut R) -> io::Result<Option<PathSample>> {
    let mut magic = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        let k = r.read(&mut magic[got..])?;
        if k == 0 {
            return if got == 0 {
                Ok(None)
            } else {
                Err(invalid("truncated record header"))
            };
        }
        got += k;
    }
    if &magic != MAGIC {
        return Err(invalid("not a path dump record"));
    }
    let tag = u64_at(r)?;
    let model = u8::try_from(tag)
        .ok()
        .and_then(Model::from_tag)
        .ok_or_else(|| invalid(format!("unknown model tag {tag}")))?;
    let dt = f64_at(r)?;
    let _horizon = f64_at(r)?;
    let eps = f64_at(r)?;
    let seed = u64_at(r)?;
    let stream = u64_at(r)?;
    let points = u64_at(r)? as usize;
    if points == 0 {
        return Err(invalid("record without points"));
    }
    let mut columns = [Vec::with_capacity(points), Vec::with_capacity(points), Vec::with_capacity(points)];
    for c in columns.iter_mut() {
        for _ in 0..points {
            c.push(f64_at(r)?);
        }
    }
    let mut touch = vec![0u8; points];
    r.read_exact(&mut touch)?;
    Ok(Some(PathSample {
        model,
        dt,
        steps: points - 1,
        bandwidth: (!eps.is_nan()).then_some(eps),
        seed,
        stream,
        columns,
        zero_touch: touch.into_iter().map(|b| b != 0).collect(),
    }))
}

pub fn read_all<R: Read>(r: &mut R) -> io::Result<Vec<PathSample>> {
    let mut out = Vec::new();
    while let Some(p) = read_path(r)? {
        out.push(p);
    }
    Ok(out)
}
