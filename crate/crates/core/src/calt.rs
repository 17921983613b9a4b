//! The `CALT` binary tensor format.
//!
//! Layout: magic bytes `CALT`, one version byte, one dtype byte
//! (0 = little-endian f64, 1 = little-endian i32), one rank byte, `rank`
//! little-endian u32 dimensions, then the raw payload. Save/load round-trips
//! are bit-identical, and the format is trivially parseable from any
//! language.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::field::{FieldError, LabelField, LogitField};

pub const MAGIC: [u8; 4] = *b"CALT";
pub const VERSION: u8 = 1;

const DTYPE_F64: u8 = 0;
const DTYPE_I32: u8 = 1;

/// Hard cap on total element count; anything larger is a corrupt header.
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum CaltError {
    #[error("bad magic: expected \"CALT\"")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("dtype mismatch: expected {expected}, file holds {got}")]
    DtypeMismatch {
        expected: &'static str,
        got: &'static str,
    },
    #[error("rank mismatch: expected {expected}, file holds {got}")]
    RankMismatch { expected: usize, got: usize },
    #[error("dimension overflow: {0:?}")]
    DimensionOverflow(Vec<u32>),
    #[error("truncated payload: wanted {wanted} bytes, got {got}")]
    TruncatedPayload { wanted: usize, got: usize },
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error("field validation failed: {0}")]
    InvalidField(#[from] FieldError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Raw tensor payload: either f64 or i32 elements.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorPayload {
    F64(Vec<f64>),
    I32(Vec<i32>),
}

impl TensorPayload {
    fn dtype_code(&self) -> u8 {
        match self {
            TensorPayload::F64(_) => DTYPE_F64,
            TensorPayload::I32(_) => DTYPE_I32,
        }
    }

    fn dtype_name(&self) -> &'static str {
        match self {
            TensorPayload::F64(_) => "f64",
            TensorPayload::I32(_) => "i32",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorPayload::F64(v) => v.len(),
            TensorPayload::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dtype-tagged tensor with explicit dimensions, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<u32>,
    pub payload: TensorPayload,
}

impl RawTensor {
    pub fn f64(dims: Vec<u32>, values: Vec<f64>) -> Self {
        Self {
            dims,
            payload: TensorPayload::F64(values),
        }
    }

    pub fn i32(dims: Vec<u32>, values: Vec<i32>) -> Self {
        Self {
            dims,
            payload: TensorPayload::I32(values),
        }
    }
}

fn element_count(dims: &[u32]) -> Result<usize, CaltError> {
    let mut product: u64 = 1;
    for &d in dims {
        product = product
            .checked_mul(u64::from(d))
            .ok_or_else(|| CaltError::DimensionOverflow(dims.to_vec()))?;
        if product > MAX_ELEMENTS {
            return Err(CaltError::DimensionOverflow(dims.to_vec()));
        }
    }
    Ok(product as usize)
}

/// Serialize a tensor to the CALT byte layout.
pub fn encode_tensor(tensor: &RawTensor) -> Result<Vec<u8>, CaltError> {
    let count = element_count(&tensor.dims)?;
    if count != tensor.payload.len() {
        return Err(CaltError::TruncatedPayload {
            wanted: count,
            got: tensor.payload.len(),
        });
    }
    let elem_size = match tensor.payload {
        TensorPayload::F64(_) => 8,
        TensorPayload::I32(_) => 4,
    };
    let mut bytes = Vec::with_capacity(7 + tensor.dims.len() * 4 + count * elem_size);
    bytes.extend_from_slice(&MAGIC);
    bytes.push(VERSION);
    bytes.push(tensor.payload.dtype_code());
    bytes.push(tensor.dims.len() as u8);
    for &d in &tensor.dims {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    match &tensor.payload {
        TensorPayload::F64(values) => {
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        TensorPayload::I32(values) => {
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(bytes)
}

/// Parse a tensor from CALT bytes, validating the full header and payload.
pub fn decode_tensor(bytes: &[u8]) -> Result<RawTensor, CaltError> {
    let mut cursor = bytes;
    let mut header = [0u8; 7];
    read_exact(&mut cursor, &mut header)?;
    if header[0..4] != MAGIC {
        return Err(CaltError::BadMagic);
    }
    if header[4] != VERSION {
        return Err(CaltError::UnsupportedVersion(header[4]));
    }
    let dtype = header[5];
    let rank = header[6] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut buf = [0u8; 4];
        read_exact(&mut cursor, &mut buf)?;
        dims.push(u32::from_le_bytes(buf));
    }
    let count = element_count(&dims)?;
    let payload = match dtype {
        DTYPE_F64 => {
            let mut values = Vec::with_capacity(count);
            let mut buf = [0u8; 8];
            for _ in 0..count {
                read_exact(&mut cursor, &mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            TensorPayload::F64(values)
        }
        DTYPE_I32 => {
            let mut values = Vec::with_capacity(count);
            let mut buf = [0u8; 4];
            for _ in 0..count {
                read_exact(&mut cursor, &mut buf)?;
                values.push(i32::from_le_bytes(buf));
            }
            TensorPayload::I32(values)
        }
        other => return Err(CaltError::UnknownDtype(other)),
    };
    if !cursor.is_empty() {
        return Err(CaltError::TrailingBytes);
    }
    Ok(RawTensor { dims, payload })
}

fn read_exact(cursor: &mut &[u8], buf: &mut [u8]) -> Result<(), CaltError> {
    if cursor.len() < buf.len() {
        return Err(CaltError::TruncatedPayload {
            wanted: buf.len(),
            got: cursor.len(),
        });
    }
    let (head, tail) = cursor.split_at(buf.len());
    buf.copy_from_slice(head);
    *cursor = tail;
    Ok(())
}

/// Write a tensor to disk.
pub fn save_tensor(tensor: &RawTensor, path: &Path) -> Result<(), CaltError> {
    let bytes = encode_tensor(tensor)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Read a tensor from disk.
pub fn load_tensor(path: &Path) -> Result<RawTensor, CaltError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_tensor(&bytes)
}

/// Save a logit field as a rank-3 f64 tensor (H, W, K).
pub fn save_logits(field: &LogitField, path: &Path) -> Result<(), CaltError> {
    let tensor = RawTensor::f64(
        vec![
            field.height() as u32,
            field.width() as u32,
            field.num_classes() as u32,
        ],
        field.data().to_vec(),
    );
    save_tensor(&tensor, path)
}

/// Load a logit field from a rank-3 f64 tensor.
pub fn load_logits(path: &Path) -> Result<LogitField, CaltError> {
    let tensor = load_tensor(path)?;
    logits_from_tensor(&tensor)
}

pub fn logits_from_tensor(tensor: &RawTensor) -> Result<LogitField, CaltError> {
    let values = match &tensor.payload {
        TensorPayload::F64(values) => values,
        other => {
            return Err(CaltError::DtypeMismatch {
                expected: "f64",
                got: other.dtype_name(),
            })
        }
    };
    if tensor.dims.len() != 3 {
        return Err(CaltError::RankMismatch {
            expected: 3,
            got: tensor.dims.len(),
        });
    }
    let [h, w, k] = [tensor.dims[0], tensor.dims[1], tensor.dims[2]];
    Ok(LogitField::new(
        h as usize,
        w as usize,
        k as usize,
        values.clone(),
    )?)
}

/// Save a label field as a rank-2 i32 tensor (H, W).
///
/// The class count and background class are context the file does not carry;
/// the caller supplies them again at load time.
pub fn save_labels(field: &LabelField, path: &Path) -> Result<(), CaltError> {
    let values: Vec<i32> = field.data().iter().map(|&v| v as i32).collect();
    let tensor = RawTensor::i32(vec![field.height() as u32, field.width() as u32], values);
    save_tensor(&tensor, path)
}

/// Load a label field from a rank-2 i32 tensor.
pub fn load_labels(
    path: &Path,
    num_classes: usize,
    background_class: usize,
) -> Result<LabelField, CaltError> {
    let tensor = load_tensor(path)?;
    let values = match &tensor.payload {
        TensorPayload::I32(values) => values,
        other => {
            return Err(CaltError::DtypeMismatch {
                expected: "i32",
                got: other.dtype_name(),
            })
        }
    };
    if tensor.dims.len() != 2 {
        return Err(CaltError::RankMismatch {
            expected: 2,
            got: tensor.dims.len(),
        });
    }
    let mut data = Vec::with_capacity(values.len());
    for &v in values {
        if v < 0 {
            return Err(CaltError::InvalidField(FieldError::LabelOutOfRange {
                index: data.len(),
                label: 0,
                classes: num_classes,
            }));
        }
        data.push(v as u32);
    }
    Ok(LabelField::new(
        tensor.dims[0] as usize,
        tensor.dims[1] as usize,
        num_classes,
        background_class,
        data,
    )?)
}
