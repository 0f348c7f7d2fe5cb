//! Checkpoint container shared by both networks.
//!
//! `CKPT` magic, `u32` version, `u64` header length, a JSON header (model
//! kind, architecture config, seed, progress counter, parameter table), then
//! every parameter as row-major little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Params;

const MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Epochs for the speaker encoder, iterations for the conversion net.
    pub progress: u64,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    config: &impl Serialize,
    seed: u64,
    progress: u64,
    params: &Params,
) -> Result<()> {
    let header = CheckpointHeader {
        kind: kind.to_owned(),
        config: serde_json::to_value(config).expect("config serializes"),
        seed,
        progress,
        params: params
            .iter()
            .map(|(name, v)| ParamEntry {
                name: name.to_owned(),
                rows: v.nrows(),
                cols: v.ncols(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec_pretty(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(16 + header_bytes.len() + 8 * params.numel());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    for (_, v) in params.iter() {
        for x in v.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    // Write-then-rename keeps the previous checkpoint intact if we die mid-write.
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub struct LoadedCheckpoint {
    pub header: CheckpointHeader,
    pub arrays: Vec<(String, Array2<f64>)>,
}

impl LoadedCheckpoint {
    pub fn config<T: DeserializeOwned>(&self, path: &Path) -> Result<T> {
        serde_json::from_value(self.header.config.clone())
            .map_err(|e| Error::format(path, format!("bad model config: {e}")))
    }

    /// Copies arrays into `params` by name, checking shapes.
    pub fn restore_into(&self, path: &Path, params: &mut Params) -> Result<()> {
        if self.arrays.len() != params.len() {
            return Err(Error::format(
                path,
                format!(
                    "{} arrays stored, model has {}",
                    self.arrays.len(),
                    params.len()
                ),
            ));
        }
        for (name, value) in &self.arrays {
            let id = params
                .id_of(name)
                .ok_or_else(|| Error::format(path, format!("unknown parameter {name}")))?;
            let slot = params.get_mut(id);
            if slot.dim() != value.dim() {
                return Err(Error::format(
                    path,
                    format!(
                        "{name}: stored {:?}, model expects {:?}",
                        value.dim(),
                        slot.dim()
                    ),
                ));
            }
            slot.assign(value);
        }
        Ok(())
    }
}

pub fn load_checkpoint(path: &Path, expected_kind: &str) -> Result<LoadedCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..body_start])
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.kind != expected_kind {
        return Err(Error::format(
            path,
            format!(
                "expected a {expected_kind} checkpoint, found {}",
                header.kind
            ),
        ));
    }

    let mut offset = body_start;
    let mut arrays = Vec::with_capacity(header.params.len());
    for entry in &header.params {
        let n = entry.rows * entry.cols;
        let end = offset + 8 * n;
        if end > bytes.len() {
            return Err(Error::format(
                path,
                format!("truncated data for {}", entry.name),
            ));
        }
        let data: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push((
            entry.name.clone(),
            Array2::from_shape_vec((entry.rows, entry.cols), data).expect("length checked"),
        ));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::format(path, "trailing bytes after parameter data"));
    }
    Ok(LoadedCheckpoint { header, arrays })
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
