//! Versioned model checkpoints.
//!
//! ```text
//! ilicast-checkpoint\n
//! version 1\n
//! header <N>\n
//! <N bytes of JSON: architecture, tensor names/shapes, scaler, config,
//!  payload length and SHA-256>\n
//! <payload: every tensor value as a little-endian f64, in tensor order>
//! ```
//!
//! The JSON header is written with sorted keys and shortest round-trip float
//! formatting, so save → load → save reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Architecture, ModelParams};
use crate::data::ScalerParams;
use crate::error::{CheckpointError, Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "ilicast-checkpoint";

/// Everything needed to reproduce forecasts from a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub scaler: Option<ScalerParams>,
    /// Snapshot of the run configuration that produced the weights.
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    config: serde_json::Value,
    payload_bytes: usize,
    payload_sha256: String,
    scaler: Option<ScalerParams>,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    CheckpointError::Corrupt(msg.into()).into()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.params.tensors();
        let mut payload = Vec::with_capacity(8 * self.params.num_parameters());
        for (_, t) in &tensors {
            for v in t.values() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            architecture: self.params.arch,
            config: self.config.clone(),
            payload_bytes: payload.len(),
            payload_sha256: hex::encode(Sha256::digest(&payload)),
            scaler: self.scaler.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().dims(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(format!("cannot encode header: {e}")))?;
        let mut out = Vec::with_capacity(json.len() + payload.len() + 64);
        out.extend_from_slice(format!("{MAGIC}\nversion {FORMAT_VERSION}\nheader {}\n", json.len()).as_bytes());
        out.extend_from_slice(&json);
        out.push(b'\n');
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rest = bytes;
        let mut line = || -> Result<&str> {
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| corrupt("truncated preamble"))?;
            let l = std::str::from_utf8(&rest[..end]).map_err(|_| corrupt("preamble is not UTF-8"))?;
            rest = &rest[end + 1..];
            Ok(l)
        };
        if line()? != MAGIC {
            return Err(corrupt("not an ilicast checkpoint"));
        }
        let version: u32 = line()?
            .strip_prefix("version ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("malformed version line"))?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            }
            .into());
        }
        let header_len: usize = line()?
            .strip_prefix("header ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("malformed header line"))?;
        if rest.len() < header_len + 1 || rest[header_len] != b'\n' {
            return Err(corrupt("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&rest[..header_len]).map_err(|e| corrupt(format!("header: {e}")))?;
        let payload = &rest[header_len + 1..];
        if payload.len() != header.payload_bytes {
            return Err(corrupt(format!(
                "payload is {} bytes, header declares {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(corrupt("payload checksum mismatch"));
        }

        let mut params =
            ModelParams::zeros(header.architecture).map_err(|e| CheckpointError::DimMismatch(e.to_string()))?;
        {
            let expected = params.tensors();
            if expected.len() != header.tensors.len() {
                return Err(CheckpointError::DimMismatch(format!(
                    "architecture has {} tensors, file lists {}",
                    expected.len(),
                    header.tensors.len()
                ))
                .into());
            }
            for ((name, t), entry) in expected.iter().zip(&header.tensors) {
                if *name != entry.name || t.shape().dims() != entry.shape {
                    return Err(CheckpointError::DimMismatch(format!(
                        "expected {name} {:?}, file has {} {:?}",
                        t.shape().dims(),
                        entry.name,
                        entry.shape
                    ))
                    .into());
                }
            }
        }
        let total: usize = params.num_parameters();
        if payload.len() != 8 * total {
            return Err(CheckpointError::DimMismatch(format!(
                "payload holds {} values, architecture needs {total}",
                payload.len() / 8
            ))
            .into());
        }
        let mut chunks = payload.chunks_exact(8);
        for t in params.tensors_mut() {
            for v in t.values_mut() {
                let raw: [u8; 8] = chunks.next().expect("length checked").try_into().expect("8 bytes");
                *v = f64::from_le_bytes(raw);
            }
        }
        Ok(Checkpoint {
            params,
            scaler: header.scaler,
            config: header.config,
        })
    }
}

pub fn checkpoint_save(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
