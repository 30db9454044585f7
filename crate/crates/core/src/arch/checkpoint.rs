//! Single-file model checkpoints.
//!
//! Layout: one line of JSON (the header), a `\n`, then every parameter's
//! entries as little-endian `f64`, in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::network::{Network, NetworkConfig};

const FORMAT: &str = "ckdyn-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    config: NetworkConfig,
    parameters: Vec<Entry>,
}

pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let params = net.parameters();
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        seed: net.config().seed,
        config: net.config().clone(),
        parameters: params
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    out.push(b'\n');
    for p in params {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..split]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let mut net = Network::new(header.config)?;
    let mut payload = &bytes[split + 1..];
    let mut slots = net.parameters_mut();
    if slots.len() != header.parameters.len() {
        return Err(Error::Checkpoint(format!(
            "header lists {} parameters, configuration has {}",
            header.parameters.len(),
            slots.len()
        )));
    }
    for (slot, entry) in slots.iter_mut().zip(&header.parameters) {
        if slot.name != entry.name || slot.value.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` {:?} does not match `{}` {:?}",
                entry.name,
                entry.shape,
                slot.name,
                slot.value.shape()
            )));
        }
        let n = slot.value.numel();
        if payload.len() < n * 8 {
            return Err(Error::Checkpoint(format!("payload truncated in `{}`", entry.name)));
        }
        let (head, rest) = payload.split_at(n * 8);
        let data = head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        slot.value = Tensor::new(entry.shape.clone(), data)?;
        payload = rest;
    }
    if !payload.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", payload.len())));
    }
    Ok(net)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(net)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
