//! ATSR: a minimal portable tensor file.
//!
//! Layout: `b"ATSR"`, `u8` version (1), `u8` dtype code (0 = f32, 1 = f64),
//! `u8` rank, `rank` little-endian `u64` dims, then the row-major payload in
//! little-endian order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{numel, DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"ATSR";
pub const VERSION: u8 = 1;

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 8 * t.rank() + t.numel() * T::DTYPE.size_of());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Read the header: `(dtype, shape, payload offset)`.
fn header(bytes: &[u8]) -> Result<(DType, Vec<usize>, usize)> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing ATSR magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported ATSR version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[5])))?;
    let rank = bytes[6] as usize;
    let dims_end = 7 + 8 * rank;
    if bytes.len() < dims_end {
        return Err(Error::Format("truncated ATSR header".into()));
    }
    let shape: Vec<usize> = bytes[7..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let expected = dims_end + numel(&shape) * dtype.size_of();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {}",
            bytes.len() - dims_end,
            expected - dims_end
        )));
    }
    Ok((dtype, shape, dims_end))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (dtype, shape, offset) = header(bytes)?;
    if dtype != T::DTYPE {
        return Err(Error::DType {
            expected: T::DTYPE.name(),
            found: dtype.name(),
        });
    }
    let data = bytes[offset..]
        .chunks_exact(dtype.size_of())
        .map(T::read_le)
        .collect();
    Tensor::new(shape, data)
}

/// Decode regardless of the stored dtype, converting to `T`.
pub fn decode_as<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (dtype, _, _) = header(bytes)?;
    match dtype {
        DType::F32 => decode::<f32>(bytes).map(|t| t.cast()),
        DType::F64 => decode::<f64>(bytes).map(|t| t.cast()),
    }
}

pub fn write<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn read<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode(&fs::read(path)?)
}

pub fn read_as<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_as(&fs::read(path)?)
}
