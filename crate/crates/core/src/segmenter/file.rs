//! Model files: a compact JSON header, the two bytes `\n\0`, then the weights
//! as little-endian `f32` in canonical layout order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ArchConfig, ModelParams, Provenance};

pub const MODEL_FORMAT: &str = "LPMODEL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    arch: ArchConfig,
    provenance: Provenance,
    weight_count: usize,
}

pub fn model_to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let header = Header {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_FORMAT_VERSION,
        arch: params.arch,
        provenance: params.provenance.clone(),
        weight_count: params.weights.len(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.extend_from_slice(b"\n\0");
    out.reserve(4 * params.weights.len());
    for &w in &params.weights {
        out.extend_from_slice(&(w as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let sep = bytes
        .windows(2)
        .position(|w| w == b"\n\0")
        .ok_or_else(|| Error::MalformedHeader("missing header separator".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..sep])?;
    if header.format != MODEL_FORMAT || header.version != MODEL_FORMAT_VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported model format {} v{}",
            header.format, header.version
        )));
    }
    let payload = &bytes[sep + 2..];
    let expected = 4 * header.weight_count;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingData {
            expected,
            found: payload.len(),
        });
    }
    let weights = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ModelParams::new(header.arch, weights, header.provenance)
}

pub fn save_model(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
