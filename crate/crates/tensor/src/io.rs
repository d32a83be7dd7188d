//! `RGT1` tensor dump format.
//!
//! Layout: magic `RGT1`, `u32` rank, `rank` x `u32` extents, `u8` dtype tag
//! (0 = f32, 1 = f64), then the raw values. All integers and values are
//! little-endian.

use std::io::{Read, Write};

use crate::error::{Result, TensorError};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: [u8; 4] = *b"RGT1";

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(9 + 4 * t.rank() + t.numel() * T::DTYPE.size());
    buf.extend_from_slice(&TENSOR_MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| TensorError::Format(format!("extent {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.push(T::DTYPE.tag());
    for &v in t.data() {
        v.to_le_bytes_vec(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

/// A decoded tensor of either element type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to the requested element type (exact when it already matches).
    pub fn into_typed<T: Scalar>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> TensorError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        TensorError::Format("truncated tensor record".into())
    } else {
        TensorError::Io(e)
    }
}

fn read_values<T: Scalar, R: Read>(r: &mut R, shape: Vec<usize>) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let size = T::DTYPE.size();
    let mut bytes = vec![0u8; n * size];
    r.read_exact(&mut bytes).map_err(truncated)?;
    let data = bytes.chunks_exact(size).map(T::from_le_slice).collect();
    Tensor::new(shape, data)
}

pub fn read_any_tensor<R: Read>(r: &mut R) -> Result<AnyTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != TENSOR_MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(TensorError::Format(format!("implausible rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag).map_err(truncated)?;
    match DType::from_tag(tag[0]) {
        Some(DType::F32) => Ok(AnyTensor::F32(read_values(r, shape)?)),
        Some(DType::F64) => Ok(AnyTensor::F64(read_values(r, shape)?)),
        None => Err(TensorError::Format(format!("unknown dtype tag {}", tag[0]))),
    }
}

/// Reads a tensor whose stored dtype must equal `T`.
pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let any = read_any_tensor(r)?;
    if any.dtype() != T::DTYPE {
        return Err(TensorError::Format(format!(
            "stored dtype {:?}, expected {:?}",
            any.dtype(),
            T::DTYPE
        )));
    }
    Ok(any.into_typed())
}
