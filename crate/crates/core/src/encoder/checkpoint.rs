//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `CLADCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header, then every
//! tensor's values as little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Encoder, TinyEncoder, TinyEncoderConfig};
use crate::error::{Error, Result};
use crate::nn::Param;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CLADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Encoder,
    Classifier,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: CheckpointKind,
    step: u64,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    /// Architecture and run metadata.
    pub meta: serde_json::Value,
    pub tensors: Vec<Param>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind,
            step: self.step,
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let n_values: usize = self.tensors.iter().map(Param::len).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 4 * n_values);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in &t.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut data = &body[header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if data.len() < 4 * n {
                return Err(Error::Checkpoint(format!("truncated data for tensor {}", entry.name)));
            }
            let value = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            data = &data[4 * n..];
            tensors.push(Param::new(entry.name, entry.shape, value));
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            kind: header.kind,
            step: header.step,
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<&Self> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(self)
    }

    pub fn tensor(&self, name: &str) -> Option<&Param> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Copies values into `targets` by name, checking shapes.
pub(crate) fn load_tensors(targets: Vec<&mut Param>, ckpt: &Checkpoint) -> Result<()> {
    for t in targets {
        let src = ckpt
            .tensor(&t.name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks tensor {}", t.name)))?;
        if src.shape != t.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?} in checkpoint, model expects {:?}",
                t.name, src.shape, t.shape
            )));
        }
        t.value.copy_from_slice(&src.value);
    }
    Ok(())
}

impl TinyEncoder {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = encoder_config_of(ckpt)?;
        let mut enc = TinyEncoder::new(config, 0)?;
        enc.load_checkpoint(ckpt)?;
        Ok(enc)
    }
}

/// Parameters followed by buffers, as stored in encoder checkpoints.
pub(crate) fn encoder_tensors<E: Encoder>(enc: &E) -> Vec<Param> {
    enc.params().into_iter().chain(enc.buffers()).cloned().collect()
}

pub(crate) fn encoder_config_of(ckpt: &Checkpoint) -> Result<TinyEncoderConfig> {
    let value = ckpt
        .meta
        .get("encoder")
        .ok_or_else(|| Error::Checkpoint("checkpoint metadata lacks the encoder config".into()))?;
    serde_json::from_value(value.clone()).map_err(|e| Error::Checkpoint(format!("bad encoder config: {e}")))
}
