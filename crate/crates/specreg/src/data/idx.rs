//! Big-endian IDX file parsing (unsigned-byte payloads) and a writer used
//! for round-trip tests and fixtures.

use std::path::Path;

use crate::{Error, Result};

/// Parsed IDX array: dimensions plus raw byte payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    /// Payload scaled to [0,1] reals.
    pub fn to_f64_scaled(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as f64 / 255.0).collect()
    }
}

const DTYPE_UNSIGNED_BYTE: u8 = 0x08;

/// Parses an IDX byte stream: magic 0x00 0x00 0x08 <ndims>, then ndims
/// big-endian u32 dimensions, then the unsigned-byte payload.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::IdxFormat(format!(
            "file too short for magic: {} bytes",
            bytes.len()
        )));
    }
    let magic = &bytes[0..4];
    if magic[0] != 0 || magic[1] != 0 || magic[2] != DTYPE_UNSIGNED_BYTE {
        return Err(Error::IdxFormat(format!(
            "bad magic bytes {:02x} {:02x} {:02x} {:02x} (expected 00 00 08 <ndims>)",
            magic[0], magic[1], magic[2], magic[3]
        )));
    }
    let ndims = magic[3] as usize;
    if ndims == 0 {
        return Err(Error::IdxFormat("zero-dimensional IDX array".into()));
    }
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(Error::IdxFormat(format!(
            "truncated header: need {header_len} bytes, have {}",
            bytes.len()
        )));
    }
    let mut dims = Vec::with_capacity(ndims);
    let mut total: usize = 1;
    for d in 0..ndims {
        let off = 4 + 4 * d;
        let dim = u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        total = total.checked_mul(dim).ok_or_else(|| {
            Error::IdxFormat(format!("dimension product overflows: dims so far {dims:?} x {dim}"))
        })?;
        dims.push(dim);
    }
    let expected = header_len + total;
    if bytes.len() != expected {
        return Err(Error::IdxFormat(format!(
            "payload size mismatch: expected {expected} bytes total, got {}",
            bytes.len()
        )));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header_len..].to_vec(),
    })
}

/// Serializes an array back to IDX bytes; inverse of [`parse_idx`].
pub fn write_idx(dims: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    let total: usize = dims.iter().product();
    if total != data.len() {
        return Err(Error::IdxFormat(format!(
            "data length {} does not match dims {dims:?}",
            data.len()
        )));
    }
    if dims.len() > u8::MAX as usize {
        return Err(Error::IdxFormat("too many dimensions".into()));
    }
    let mut out = vec![0, 0, DTYPE_UNSIGNED_BYTE, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    Ok(out)
}

/// Reads and parses an IDX file.
pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path)?;
    parse_idx(&bytes)
}
