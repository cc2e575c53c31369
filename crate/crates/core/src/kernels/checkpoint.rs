//! Binary tensor checkpoints.
//!
//! Layout: one line of compact JSON (the header, terminated by `\n`) followed by the
//! tensors' data as little-endian `f64`, concatenated in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KernelError, Tensor};

pub const CHECKPOINT_FORMAT: &str = "daegc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
    /// Caller-defined metadata (training phase, iteration counters, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode_checkpoint(
    seed: u64,
    meta: serde_json::Value,
    tensors: &[(&str, &Tensor)],
) -> Result<Vec<u8>, KernelError> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        seed,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
        meta,
    };
    let mut bytes = serde_json::to_vec(&header)
        .map_err(|e| KernelError::Checkpoint(format!("header: {e}")))?;
    bytes.push(b'\n');
    let total: usize = tensors.iter().map(|(_, t)| t.data().len()).sum();
    bytes.reserve(total * 8);
    for (_, t) in tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn decode_checkpoint(
    bytes: &[u8],
) -> Result<(CheckpointHeader, Vec<(String, Tensor)>), KernelError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| KernelError::Checkpoint("missing header terminator".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| KernelError::Checkpoint(format!("header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(KernelError::Checkpoint(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let body = &bytes[newline + 1..];
    let expected: usize = header.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
    if body.len() != expected {
        return Err(KernelError::Checkpoint(format!(
            "body has {} bytes, header describes {expected}",
            body.len()
        )));
    }
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let len = entry.rows * entry.cols;
        let data = body[offset..offset + len * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset += len * 8;
        tensors.push((entry.name.clone(), Tensor::from_vec(entry.rows, entry.cols, data)?));
    }
    Ok((header, tensors))
}

pub fn write_checkpoint(
    path: &Path,
    seed: u64,
    meta: serde_json::Value,
    tensors: &[(&str, &Tensor)],
) -> Result<(), KernelError> {
    let bytes = encode_checkpoint(seed, meta, tensors)?;
    let mut f = fs::File::create(path)
        .map_err(|e| KernelError::Checkpoint(format!("{}: {e}", path.display())))?;
    f.write_all(&bytes)
        .map_err(|e| KernelError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn read_checkpoint(
    path: &Path,
) -> Result<(CheckpointHeader, Vec<(String, Tensor)>), KernelError> {
    let bytes = fs::read(path)
        .map_err(|e| KernelError::Checkpoint(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
