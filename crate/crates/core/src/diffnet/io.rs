//! `.params` files: a versioned little-endian binary container.
//!
//! ```text
//! magic       4 bytes   "CTXP"
//! version     u32       1
//! n_layers    u32
//! n_layers x (rows u32, cols u32, bias_len u32)
//! n_values    u64
//! n_values x  f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{LayerShape, ParameterSet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CTXP";
const VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, params: &ParameterSet) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.shapes().len() as u32).to_le_bytes())?;
    for s in params.shapes() {
        for v in [s.rows, s.cols, s.bias_len] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
    }
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParameterSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a .params file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported .params version {version} (expected {VERSION})"
        )));
    }
    let n_layers = read_u32(&mut r)? as usize;
    if n_layers > 4096 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        shapes.push(LayerShape {
            rows: read_u32(&mut r)? as usize,
            cols: read_u32(&mut r)? as usize,
            bias_len: read_u32(&mut r)? as usize,
        });
    }
    let n = read_u64(&mut r)? as usize;
    let want: usize = shapes.iter().map(LayerShape::len).sum();
    if n != want {
        return Err(Error::Format(format!(
            "header declares {n} values but layer shapes need {want}"
        )));
    }
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ParameterSet::new(shapes, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_params_file(path: impl AsRef<Path>, params: &ParameterSet) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + params.len() * 8);
    write_params(&mut buf, params)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_params_file(path: impl AsRef<Path>) -> Result<ParameterSet> {
    let bytes = fs::read(path)?;
    read_params(bytes.as_slice())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
