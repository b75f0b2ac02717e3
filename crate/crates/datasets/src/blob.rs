//! Data file layout: 8-byte magic, little-endian `u32` header length, JSON
//! header, then little-endian `f32` payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{DataError, Result};

pub const MAGIC: &[u8; 8] = b"SPSDATA\0";

pub fn write_blob<H: Serialize>(path: &Path, header: &H, payload: &[f32]) -> Result<()> {
    let json = serde_json::to_vec(header)
        .map_err(|e| DataError::format(path, format!("header encoding: {e}")))?;
    let mut bytes = Vec::with_capacity(12 + json.len() + 4 * payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| DataError::io(path, e))
}

/// Reads a blob whose payload must hold exactly `expected(&header)` values.
pub fn read_blob<H: DeserializeOwned>(
    path: &Path,
    expected: impl Fn(&H) -> usize,
) -> Result<(H, Vec<f32>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| DataError::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(DataError::format(path, "bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| DataError::format(path, "truncated header"))?;
    let header: H = serde_json::from_slice(body)
        .map_err(|e| DataError::format(path, format!("header: {e}")))?;
    let raw = &bytes[12 + hlen..];
    let n = expected(&header);
    if raw.len() != 4 * n {
        return Err(DataError::format(
            path,
            format!("payload has {} bytes, expected {}", raw.len(), 4 * n),
        ));
    }
    let payload = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| DataError::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| DataError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::format(path, e.to_string()))
}
