//! Parameter checkpoints: a flat archive of named `f64` arrays with the
//! network configuration embedded in a JSON header.
//!
//! Layout: `b"FNETCKPT"`, `u32` format version, `u64` header length, the JSON
//! header, then every tensor's values as little-endian `f64` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NetConfig;
use super::net::FetalNet;
use super::params::ModelParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FNETCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: NetConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn encode_checkpoint(config: &NetConfig, params: &ModelParams) -> Vec<u8> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        tensors: params
            .specs()
            .iter()
            .map(|s| TensorEntry {
                name: s.name.clone(),
                shape: s.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let values: usize = params.specs().iter().map(|s| s.len()).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 8 * values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, v) in params.iter() {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Parse a checkpoint and validate every tensor against the graph its
/// embedded configuration describes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(FetalNet, ModelParams)> {
    let bad = |m: &str| Error::CheckpointMismatch(m.to_string());
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| bad("truncated version"))?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointMismatch(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
    let len = u64::from_le_bytes(len) as usize;
    if r.len() < len {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&r[..len])
        .map_err(|e| Error::CheckpointMismatch(format!("header: {e}")))?;
    r = &r[len..];

    let net = FetalNet::new(header.config)?;
    let specs = net.param_specs();
    let mut diffs = Vec::new();
    if header.tensors.len() != specs.len() {
        diffs.push(format!(
            "expected {} tensors, found {}",
            specs.len(),
            header.tensors.len()
        ));
    }
    for (e, s) in header.tensors.iter().zip(specs) {
        if e.name != s.name || e.shape != s.shape {
            diffs.push(format!(
                "{} {:?} where {} {:?} was expected",
                e.name, e.shape, s.name, s.shape
            ));
        }
    }
    if !diffs.is_empty() {
        return Err(Error::CheckpointMismatch(diffs.join("; ")));
    }
    let total: usize = specs.iter().map(|s| s.len()).sum();
    if r.len() != 8 * total {
        return Err(Error::CheckpointMismatch(format!(
            "expected {} bytes of tensor data, found {}",
            8 * total,
            r.len()
        )));
    }
    let mut values = Vec::with_capacity(specs.len());
    let mut chunks = r.chunks_exact(8);
    for s in specs {
        values.push(
            chunks
                .by_ref()
                .take(s.len())
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect::<Vec<_>>(),
        );
    }
    let params = ModelParams::from_parts(specs.to_vec(), values);
    for (id, s, v) in params.iter() {
        if s.name.ends_with("running_var") && v.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::CheckpointMismatch(format!(
                "{} has a non-positive running variance",
                params.specs()[id.0].name
            )));
        }
    }
    Ok((net, params))
}

pub fn save_checkpoint(path: &Path, config: &NetConfig, params: &ModelParams) -> Result<()> {
    let bytes = encode_checkpoint(config, params);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(FetalNet, ModelParams)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Load a checkpoint and refuse it unless its configuration equals `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &NetConfig) -> Result<(FetalNet, ModelParams)> {
    let (net, params) = load_checkpoint(path)?;
    if net.config() != expected {
        let want = FetalNet::new(expected.clone())?;
        let detail = match want.check_params(&params) {
            Err(Error::CheckpointMismatch(d)) => d,
            _ => format!("{:?} vs {:?}", net.config(), expected),
        };
        return Err(Error::CheckpointMismatch(detail));
    }
    Ok((net, params))
}
