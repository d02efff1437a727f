//! `BKTENSR1` binary tensor files.
//!
//! Layout: 8-byte magic `BKTENSR1`, little-endian `u32` rank, `rank` x `u32`
//! dims, a `u8` dtype tag (0 = f32, 1 = f64), then the row-major payload in
//! little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{bail, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::{numel, Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"BKTENSR1";

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 + 16 + 1 + t.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&4u32.to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(T::DTYPE as u8);
    for &v in t.data() {
        v.to_le_bytes_into(&mut out);
    }
    out
}

/// Decodes a tensor, converting the payload to `T` if the stored dtype differs.
///
/// Ranks below 4 are left-padded with unit dims.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut cur = bytes;
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)
        .map_err(|_| crate::TensorError::Format("truncated header".into()))?;
    if &magic != MAGIC {
        bail!(Format, "bad magic {:?}", String::from_utf8_lossy(&magic));
    }
    let rank = read_u32(&mut cur)? as usize;
    if rank == 0 || rank > 4 {
        bail!(Format, "unsupported rank {rank}");
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(&mut cur)? as usize);
    }
    let mut shape: Shape = [1; 4];
    shape[4 - rank..].copy_from_slice(&dims);
    let mut tag = [0u8; 1];
    cur.read_exact(&mut tag)
        .map_err(|_| crate::TensorError::Format("missing dtype".into()))?;
    let Some(dtype) = DType::from_tag(tag[0]) else {
        bail!(Format, "unknown dtype tag {}", tag[0]);
    };
    let count = numel(&shape);
    let size = dtype.size();
    if cur.len() != count * size {
        bail!(
            Format,
            "payload has {} bytes, expected {}",
            cur.len(),
            count * size
        );
    }
    let data: Vec<T> = cur
        .chunks_exact(size)
        .map(|c| match dtype {
            DType::F32 => T::c(f32::from_le_slice(c) as f64),
            DType::F64 => T::c(f64::from_le_slice(c)),
        })
        .collect();
    Tensor::new(shape, data)
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)
        .map_err(|_| crate::TensorError::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(t))?;
    Ok(())
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode(&fs::read(path)?)
}
