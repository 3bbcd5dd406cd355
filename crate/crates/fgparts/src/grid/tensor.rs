//! Bit-exact tensor exchange format.
//!
//! Layout, all little-endian: the 4 magic bytes `PSF1`, a u64 rank, one u64
//! per dimension, then the row-major float32 payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"PSF1";

/// Writes `data` with shape `dims` to `path`.
pub fn write_tensor(path: impl AsRef<Path>, dims: &[usize], data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    if dims.is_empty() {
        return Err(Error::invalid("tensor rank must be at least 1"));
    }
    let expected = checked_len(dims)?;
    if data.len() != expected {
        return Err(Error::invalid(format!(
            "tensor payload length {} does not match dims {dims:?}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(4 + 8 * (1 + dims.len()) + 4 * data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(dims.len() as u64).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a tensor written by [`write_tensor`]; round-trips bit-exactly.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_tensor(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_tensor(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    if bytes.len() < 12 {
        return Err(Error::format("header: file shorter than magic + rank"));
    }
    if &bytes[0..4] != TENSOR_MAGIC {
        return Err(Error::format(format!(
            "magic: expected {TENSOR_MAGIC:?}, got {:?}",
            &bytes[0..4]
        )));
    }
    let rank = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    if rank == 0 || rank > 32 {
        return Err(Error::format(format!("rank: {rank} out of range 1..=32")));
    }
    let rank = rank as usize;
    let dims_end = 12 + 8 * rank;
    if bytes.len() < dims_end {
        return Err(Error::format("dims: truncated"));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 12 + 8 * i;
        let d = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        dims.push(usize::try_from(d).map_err(|_| Error::format("dims: overflow"))?);
    }
    let count = checked_len(&dims)?;
    let payload = &bytes[dims_end..];
    if payload.len() != count * 4 {
        return Err(Error::format(format!(
            "payload: expected {} bytes for dims {dims:?}, got {}",
            count * 4,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("dims: product overflows"))
}
