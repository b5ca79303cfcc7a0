//! On-disk checkpoint format.
//!
//! Layout (bit-exact):
//!   bytes 0-3   magic `FCH1`
//!   bytes 4-7   u32 little-endian header length
//!   header      UTF-8 JSON: {version, dtype, config, tensors, optimizer_tensors, payload_sha256}
//!   payload     concatenated little-endian IEEE-754 tensor data
//!
//! Each directory entry carries name, dtype, shape, and byte offset/length
//! into the payload. The payload hash is verified on load; loading a saved
//! model reproduces every parameter bitwise.

use crate::error::{Error, Result};
use crate::model::{build_facechannel, Model, ModelConfig};
use crate::tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"FCH1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    optimizer_tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn tensor_bytes<E: Element>(t: &Tensor<E>, out: &mut Vec<u8>) {
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Every persisted tensor of a model: trainable params plus batch-norm
/// running statistics, named `<layer>.<tensor>`.
fn named_tensors<E: Element>(model: &Model<E>) -> Vec<(String, Tensor<E>)> {
    let mut out = Vec::new();
    for layer in &model.layers {
        for (pname, t) in layer
            .op
            .param_tensors()
            .into_iter()
            .chain(layer.op.state_tensors())
        {
            out.push((format!("{}.{}", layer.name, pname), t.clone()));
        }
    }
    out
}

pub fn save_checkpoint<E: Element>(
    model: &Model<E>,
    path: &Path,
    optimizer: &[(String, Tensor<E>)],
) -> Result<()> {
    let mut payload = Vec::new();
    let mut push = |name: &str, t: &Tensor<E>, dir: &mut Vec<TensorEntry>| {
        let offset = payload.len();
        tensor_bytes(t, &mut payload);
        dir.push(TensorEntry {
            name: name.to_string(),
            dtype: E::DTYPE.as_str().to_string(),
            shape: t.shape().to_vec(),
            offset,
            length: payload.len() - offset,
        });
    };
    let mut tensors = Vec::new();
    for (name, t) in named_tensors(model) {
        push(&name, &t, &mut tensors);
    }
    let mut optimizer_tensors = Vec::new();
    for (name, t) in optimizer {
        push(name, t, &mut optimizer_tensors);
    }

    let header = Header {
        version: VERSION,
        dtype: E::DTYPE.as_str().to_string(),
        config: model.config.clone(),
        tensors,
        optimizer_tensors,
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;

    let mut out = Vec::with_capacity(8 + header_json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    fs::write(path, out)?;
    Ok(())
}

fn read_tensor<E: Element>(entry: &TensorEntry, payload: &[u8]) -> Result<Tensor<E>> {
    if entry.dtype != E::DTYPE.as_str() {
        return Err(Error::Checkpoint(format!(
            "tensor {} has dtype {}, expected {}",
            entry.name,
            entry.dtype,
            E::DTYPE.as_str()
        )));
    }
    let width = E::DTYPE.size_bytes();
    let n: usize = entry.shape.iter().product();
    if entry.length != n * width || entry.offset + entry.length > payload.len() {
        return Err(Error::Checkpoint(format!(
            "tensor {} directory entry out of bounds",
            entry.name
        )));
    }
    let bytes = &payload[entry.offset..entry.offset + entry.length];
    let data = bytes.chunks_exact(width).map(E::read_le).collect();
    Tensor::new(entry.shape.clone(), data)
        .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", entry.name)))
}

pub fn load_checkpoint<E: Element>(
    path: &Path,
) -> Result<(Model<E>, Vec<(String, Tensor<E>)>)> {
    let raw = fs::read(path)?;
    if raw.len() < 8 || &raw[0..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let header_len = u32::from_le_bytes(raw[4..8].try_into().unwrap()) as usize;
    if raw.len() < 8 + header_len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&raw[8..8 + header_len])
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            header.version
        )));
    }
    if header.dtype != E::DTYPE.as_str() {
        return Err(Error::Checkpoint(format!(
            "checkpoint dtype {} does not match requested {}",
            header.dtype,
            E::DTYPE.as_str()
        )));
    }
    let payload = &raw[8 + header_len..];
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(Error::Checkpoint("payload hash mismatch".into()));
    }

    let mut model: Model<E> = build_facechannel(&header.config)?;
    let by_name: HashMap<&str, &TensorEntry> = header
        .tensors
        .iter()
        .map(|e| (e.name.as_str(), e))
        .collect();
    for layer in &mut model.layers {
        let lname = layer.name.clone();
        for group in 0..2 {
            let slots = if group == 0 {
                layer.op.param_tensors_mut()
            } else {
                layer.op.state_tensors_mut()
            };
            for (pname, slot) in slots {
            let full = format!("{lname}.{pname}");
            let entry = by_name
                .get(full.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
            let t = read_tensor::<E>(entry, payload)?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {full} shape {:?} vs expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
                *slot = t;
            }
        }
    }
    let optimizer = header
        .optimizer_tensors
        .iter()
        .map(|e| Ok((e.name.clone(), read_tensor::<E>(e, payload)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, optimizer))
}
