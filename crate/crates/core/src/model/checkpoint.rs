//! Checkpoint container.
//!
//! Layout: the 8-byte magic `SDANCKPT`, a little-endian `u32` header length,
//! a JSON header, then every tensor as little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams};
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SDANCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    path: String,
    shape: [usize; 4],
    /// Offset into the blob, in `f32` elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    seed: u64,
    tensors: Vec<TensorEntry>,
    blob_len: usize,
}

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut entries = Vec::with_capacity(params.len());
    let mut blob = Vec::with_capacity(params.numel() * 4);
    let mut offset = 0;
    for (path, t) in params.tensors() {
        entries.push(TensorEntry {
            path: path.clone(),
            shape: t.shape().dims(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        seed: params.seed,
        tensors: entries,
        blob_len: blob.len(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len() + blob.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams, CheckpointError> {
    if bytes.len() < 12 {
        return Err(
            if bytes.starts_with(&CHECKPOINT_MAGIC[..bytes.len().min(8)]) {
                CheckpointError::Truncated(format!("{} bytes", bytes.len()))
            } else {
                CheckpointError::BadMagic
            },
        );
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < header_len {
        return Err(CheckpointError::Truncated(format!(
            "header needs {header_len} bytes, {} present",
            body.len()
        )));
    }
    let header: serde_json::Value = serde_json::from_slice(&body[..header_len])?;
    let version = header
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CheckpointError::Integrity("missing format_version".into()))?
        as u32;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let header: Header = serde_json::from_value(header)?;
    let blob = &body[header_len..];
    if blob.len() != header.blob_len {
        return Err(if blob.len() < header.blob_len {
            CheckpointError::Truncated(format!(
                "blob has {} of {} bytes",
                blob.len(),
                header.blob_len
            ))
        } else {
            CheckpointError::Integrity(format!(
                "blob has {} bytes, header declares {}",
                blob.len(),
                header.blob_len
            ))
        });
    }
    let floats = blob.len() / 4;
    if !blob.len().is_multiple_of(4) {
        return Err(CheckpointError::Integrity(
            "blob length is not a multiple of 4".into(),
        ));
    }

    let mut tensors = BTreeMap::new();
    let mut expected_offset = 0;
    for entry in &header.tensors {
        let [n, c, h, w] = entry.shape;
        let shape = Shape::new(n, c, h, w);
        let len = shape.numel();
        if entry.offset != expected_offset || entry.offset + len > floats {
            return Err(CheckpointError::Integrity(format!(
                "{} at offset {} with {len} values does not fit the blob",
                entry.path, entry.offset
            )));
        }
        expected_offset += len;
        let data = blob[entry.offset * 4..(entry.offset + len) * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        tensors.insert(
            entry.path.clone(),
            Tensor::new(shape, data).map_err(ModelError::from)?,
        );
    }
    if expected_offset != floats {
        return Err(CheckpointError::Integrity(format!(
            "shape table covers {expected_offset} values, blob holds {floats}"
        )));
    }
    Ok(ModelParams::from_parts(
        header.config,
        header.seed,
        tensors,
    )?)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&encode_checkpoint(params)).map_err(io)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
