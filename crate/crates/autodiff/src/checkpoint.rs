//! Binary parameter checkpoints.
//!
//! Layout (all integers `u32` little-endian):
//! magic `TFA1`, tensor count, then per tensor: name length, UTF-8 name bytes,
//! rank, each dimension, and `f32` little-endian payload in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{AutodiffError, Result};
use crate::params::ParamSet;
use crate::real::Real;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TFA1";

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> AutodiffError {
    let context = context.into();
    move |source| AutodiffError::Io { context, source }
}

fn put_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

pub fn write_checkpoint<T: Real>(w: &mut impl Write, params: &ParamSet<T>) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, params.len())?;
    for (_, name, t) in params.iter() {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.rank())?;
        for &d in t.shape() {
            put_u32(w, d)?;
        }
        for v in t.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint<T: Real>(path: &Path, params: &ParamSet<T>) -> Result<()> {
    let ctx = || format!("writing checkpoint {}", path.display());
    let file = File::create(path).map_err(io_err(ctx()))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, params).map_err(io_err(ctx()))?;
    w.flush().map_err(io_err(ctx()))
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| AutodiffError::Checkpoint("truncated checkpoint".into()))?;
    Ok(u32::from_le_bytes(b) as usize)
}

/// Parses checkpoint records in file order.
pub fn read_checkpoint(r: &mut impl Read) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| AutodiffError::Checkpoint("truncated checkpoint".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(AutodiffError::Checkpoint(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let count = get_u32(r)?;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = get_u32(r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| AutodiffError::Checkpoint("truncated tensor name".into()))?;
        let name = String::from_utf8(name).map_err(|_| AutodiffError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = get_u32(r)?;
        let shape = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| AutodiffError::Checkpoint(format!("truncated payload of `{name}`")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let file = File::open(path).map_err(io_err(format!("opening checkpoint {}", path.display())))?;
    read_checkpoint(&mut BufReader::new(file))
}
