//! Checkpoint file layout:
//!
//! ```text
//! magic "FSUMCKPT" | version u32 | header length u64 | JSON header | payload
//! ```
//!
//! The header lists every tensor's name, shape and offset (in elements) into
//! the payload, which is little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{LambdaTriple, ModelConfig, ModelParams};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FSUMCKPT";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub vocab_hash: String,
    pub lambdas: LambdaTriple,
    pub params: ModelParams<f32>,
    pub best_validation_loss: f64,
    pub epoch_of_best: usize,
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        &self.params.config
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    vocab_hash: String,
    lambdas: LambdaTriple,
    best_validation_loss: f64,
    epoch_of_best: usize,
    tensors: Vec<TensorEntry>,
}

pub fn checkpoint_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut offset = 0;
    let mut tensors = Vec::new();
    for (name, t) in ckpt.params.tensors() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape.clone(),
            offset,
        });
        offset += t.len();
    }
    let header = Header {
        model_config: ckpt.params.config.clone(),
        vocab_hash: ckpt.vocab_hash.clone(),
        lambdas: ckpt.lambdas,
        best_validation_loss: ckpt.best_validation_loss,
        epoch_of_best: ckpt.epoch_of_best,
        tensors,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + header.len() + offset * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in ckpt.params.tensors() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes atomically through a temporary sibling file.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    crate::corpus::write_atomic(path.as_ref(), &checkpoint_bytes(ckpt)?)
}

fn corrupt(message: impl Into<String>) -> Error {
    Error::Corrupt {
        kind: "checkpoint",
        message: message.into(),
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&buf)
}

pub fn parse_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    if buf.len() < 12 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("missing FSUMCKPT header"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Version {
            kind: "checkpoint",
            found: version,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    if buf.len() < 20 {
        return Err(corrupt("header length field is truncated"));
    }
    let header_len = u64::from_le_bytes(buf[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= buf.len())
        .ok_or_else(|| corrupt("header is truncated"))?;
    let header: Header = serde_json::from_slice(&buf[20..header_end])
        .map_err(|e| corrupt(format!("unreadable header: {e}")))?;

    let mut params = ModelParams::<f32>::zeros(&header.model_config)?;
    let payload = &buf[header_end..];
    let expected: usize = params.num_parameters();
    if payload.len() != expected * 4 {
        return Err(corrupt(format!(
            "payload holds {} bytes, the header describes {}",
            payload.len(),
            expected * 4
        )));
    }
    let slots = params.tensors_mut();
    if slots.len() != header.tensors.len() {
        return Err(Error::Shape(format!(
            "checkpoint lists {} tensors, the model has {}",
            header.tensors.len(),
            slots.len()
        )));
    }
    for ((name, t), entry) in slots.into_iter().zip(&header.tensors) {
        if entry.name != name || entry.shape != t.shape {
            return Err(Error::Shape(format!(
                "tensor {} {:?} does not match model tensor {name} {:?}",
                entry.name, entry.shape, t.shape
            )));
        }
        let bytes = payload
            .get(entry.offset * 4..(entry.offset + t.len()) * 4)
            .ok_or_else(|| corrupt(format!("tensor {name} lies outside the payload")))?;
        for (v, chunk) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    Ok(Checkpoint {
        format_version: version,
        vocab_hash: header.vocab_hash,
        lambdas: header.lambdas,
        params,
        best_validation_loss: header.best_validation_loss,
        epoch_of_best: header.epoch_of_best,
    })
}
