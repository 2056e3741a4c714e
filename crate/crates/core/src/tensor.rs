//! Dense row-major tensors and the FCT1 binary file format.
//!
//! Layout of an FCT1 file (all integers little-endian):
//!
//! | bytes          | content                                   |
//! |----------------|-------------------------------------------|
//! | 0..4           | magic `b"FCT1"`                           |
//! | 4              | dtype code (0 = f32, 1 = i64)             |
//! | 5              | number of dimensions (1..=4)              |
//! | 6..8           | reserved, zero                            |
//! | 8..8+8*ndim    | dimension sizes as u64                    |
//! | rest           | row-major payload                         |

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"FCT1";
pub const MAX_DIMS: usize = 4;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"FCT1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("tensor has {0} dimensions, at most 4 are supported")]
    TooManyDims(usize),
    #[error("tensor must have at least one dimension")]
    NoDims,
    #[error("dimension {index} has size 0")]
    ZeroDim { index: usize },
    #[error("reserved header bytes are not zero")]
    ReservedBytes,
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("shape {shape:?} holds {expected} elements but data has {found}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    I64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, TensorError> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::I64),
            other => Err(TensorError::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::I64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::I64 => "i64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }
}

/// Immutable dense tensor with 1 to 4 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() {
        return Err(TensorError::NoDims);
    }
    if shape.len() > MAX_DIMS {
        return Err(TensorError::TooManyDims(shape.len()));
    }
    if let Some(index) = shape.iter().position(|&d| d == 0) {
        return Err(TensorError::ZeroDim { index });
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        let expected = check_shape(&shape)?;
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_i64(shape: Vec<usize>, data: Vec<i64>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::I64(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::I64(_) => DType::I64,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.len() == 0
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::I64(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.data {
            TensorData::I64(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    /// Serializes the tensor into FCT1 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let ndim = self.shape.len();
        let mut out = Vec::with_capacity(8 + 8 * ndim + self.len() * self.dtype().size());
        out.extend_from_slice(MAGIC);
        out.push(self.dtype().code());
        out.push(ndim as u8);
        out.extend_from_slice(&[0, 0]);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    /// Parses FCT1 bytes. The buffer must hold exactly one tensor.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let need = |expected: usize| {
            if bytes.len() < expected {
                Err(TensorError::Truncated {
                    expected,
                    found: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(8)?;
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4-byte slice");
        if &magic != MAGIC {
            return Err(TensorError::BadMagic { found: magic });
        }
        let dtype = DType::from_code(bytes[4])?;
        let ndim = bytes[5] as usize;
        if ndim > MAX_DIMS {
            return Err(TensorError::TooManyDims(ndim));
        }
        if bytes[6] != 0 || bytes[7] != 0 {
            return Err(TensorError::ReservedBytes);
        }
        let header = 8 + 8 * ndim;
        need(header)?;
        let shape: Vec<usize> = bytes[8..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")) as usize)
            .collect();
        let count = check_shape(&shape)?;
        let total = count
            .checked_mul(dtype.size())
            .and_then(|p| p.checked_add(header))
            .ok_or(TensorError::Truncated {
                expected: usize::MAX,
                found: bytes.len(),
            })?;
        need(total)?;
        if bytes.len() > total {
            return Err(TensorError::TrailingBytes {
                extra: bytes.len() - total,
            });
        }
        let payload = &bytes[header..total];
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                    .collect(),
            ),
            DType::I64 => TensorData::I64(
                payload
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
            ),
        };
        Tensor::new(shape, data)
    }
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Tensor::from_bytes(&bytes)
}
