//! Binary checkpoint container shared by the IDS and agent persistence.
//!
//! Layout: one JSON header line (caller-defined, must declare `shapes`,
//! the row-major dimensions of each following array), then the arrays as
//! little-endian 64-bit floats, concatenated in declared order.

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};
use thiserror::Error;

use crate::fsio;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: wanted {want} payload bytes, found {got}")]
    Truncated { want: usize, got: usize },
    #[error("checkpoint has {got} trailing payload bytes past the declared shapes")]
    TrailingData { got: usize },
    #[error("checkpoint array {index} has shape {got:?}, expected {want:?}")]
    ShapeMismatch {
        index: usize,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("checkpoint declares {got} arrays, expected {want}")]
    ArrayCount { got: usize, want: usize },
    #[error("checkpoint contains a non-finite parameter")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Headers embed their shape list so the payload length is self-describing.
pub trait ShapedHeader {
    fn shapes(&self) -> &[Vec<usize>];
}

fn shape_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Serializes `header` plus `arrays` into checkpoint bytes. Array order
/// must match the header's shape order.
pub fn to_bytes<H>(header: &H, arrays: &[&[f64]]) -> Result<Vec<u8>, CheckpointError>
where
    H: Serialize + ShapedHeader,
{
    let shapes = header.shapes();
    if shapes.len() != arrays.len() {
        return Err(CheckpointError::ArrayCount {
            got: arrays.len(),
            want: shapes.len(),
        });
    }
    for (index, (shape, array)) in shapes.iter().zip(arrays).enumerate() {
        if shape_len(shape) != array.len() {
            return Err(CheckpointError::ShapeMismatch {
                index,
                got: vec![array.len()],
                want: shape.clone(),
            });
        }
    }
    let mut out = serde_json::to_string(header)
        .map_err(|e| CheckpointError::Header(e.to_string()))?
        .into_bytes();
    out.push(b'\n');
    for array in arrays {
        for value in array.iter() {
            if !value.is_finite() {
                return Err(CheckpointError::NonFinite);
            }
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses checkpoint bytes into the header and its arrays. The payload
/// must match the declared shapes exactly: short reads and trailing bytes
/// are both errors.
pub fn from_bytes<H>(bytes: &[u8]) -> Result<(H, Vec<Vec<f64>>), CheckpointError>
where
    H: DeserializeOwned + ShapedHeader,
{
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::Header("missing header line".into()))?;
    let header: H = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let payload = &bytes[newline + 1..];
    let want: usize = header.shapes().iter().map(|s| shape_len(s) * 8).sum();
    if payload.len() < want {
        return Err(CheckpointError::Truncated {
            want,
            got: payload.len(),
        });
    }
    if payload.len() > want {
        return Err(CheckpointError::TrailingData {
            got: payload.len() - want,
        });
    }
    let mut arrays = Vec::with_capacity(header.shapes().len());
    let mut cursor = 0;
    for shape in header.shapes() {
        let n = shape_len(shape);
        let mut array = Vec::with_capacity(n);
        for _ in 0..n {
            let chunk: [u8; 8] = payload[cursor..cursor + 8].try_into().expect("8 bytes");
            let value = f64::from_le_bytes(chunk);
            if !value.is_finite() {
                return Err(CheckpointError::NonFinite);
            }
            array.push(value);
            cursor += 8;
        }
        arrays.push(array);
    }
    Ok((header, arrays))
}

pub fn write_file<H>(path: &Path, header: &H, arrays: &[&[f64]]) -> Result<(), CheckpointError>
where
    H: Serialize + ShapedHeader,
{
    let bytes = to_bytes(header, arrays)?;
    fsio::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_file<H>(path: &Path) -> Result<(H, Vec<Vec<f64>>), CheckpointError>
where
    H: DeserializeOwned + ShapedHeader,
{
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes)
}
