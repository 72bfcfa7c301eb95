//! Raw tensor files: a one-line JSON header `{"shape":[...],"dtype":"f32"}`
//! followed by little-endian 32-bit floats.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    dtype: String,
}

/// Encode a tensor; values are stored as `f32`.
pub fn encode<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let header = Header {
        shape: t.shape().to_vec(),
        dtype: "f32".to_string(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(t.numel() * 4);
    for v in t.data() {
        out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode<T: Real>(bytes: &[u8], origin: &Path) -> Result<Tensor<T>> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(origin, "missing header line"))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::format(origin, format!("bad header: {e}")))?;
    let body = &bytes[newline + 1..];
    let numel: usize = header.shape.iter().product();
    let values: Vec<T> = match header.dtype.as_str() {
        "f32" if body.len() == numel * 4 => body
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        "f64" if body.len() == numel * 8 => body
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        "f32" | "f64" => {
            return Err(Error::format(
                origin,
                format!(
                    "payload of {} bytes does not match shape {:?} ({})",
                    body.len(),
                    header.shape,
                    header.dtype
                ),
            ))
        }
        other => return Err(Error::format(origin, format!("unsupported dtype {other}"))),
    };
    Tensor::new(&header.shape, values)
}

pub fn write<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
