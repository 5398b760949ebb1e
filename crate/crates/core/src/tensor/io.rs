//! Tensor container: a little-endian `u32` header length, a JSON header
//! `{"shape": [...], "dtype": "f32"|"f64", "byte_order": "little"}`, then the
//! raw IEEE-754 values in row-major order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{DType, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub byte_order: String,
}

const LITTLE: &str = "little";

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    let header = TensorHeader { shape: t.shape().to_vec(), dtype: T::DTYPE, byte_order: LITTLE.into() };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    let mut raw = Vec::with_capacity(t.len() * T::BYTES);
    for &v in t.data() {
        v.write_le(&mut raw);
    }
    w.write_all(&raw)?;
    Ok(())
}

/// Read one container, converting the stored precision to `T`.
pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<(TensorHeader, Tensor<T>)> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: TensorHeader = serde_json::from_slice(&json)?;
    if header.byte_order != LITTLE {
        return Err(Error::Checkpoint(format!("unsupported byte order `{}`", header.byte_order)));
    }
    let n: usize = header.shape.iter().product();
    let width = match header.dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut raw = vec![0u8; n * width];
    r.read_exact(&mut raw)?;
    let data: Vec<T> = match header.dtype {
        DType::F32 => raw.chunks_exact(4).map(|b| T::of(f32::read_le(b) as f64)).collect(),
        DType::F64 => raw.chunks_exact(8).map(|b| T::of(f64::read_le(b))).collect(),
    };
    let t = Tensor::new(&header.shape, data)?;
    Ok((header, t))
}
