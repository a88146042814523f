//! Model file: `b"QAMVS\x01"`, a JSON header with the config and the
//! parameter manifest, then little-endian `f32` payloads in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PolicyConfig, PolicyParams};
use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 6] = b"QAMVS\x01";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    #[serde(flatten)]
    config: PolicyConfig,
    params: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

/// Serialized model. Parameter values are narrowed to `f32`.
pub fn model_bytes(p: &PolicyParams) -> Vec<u8> {
    let header = Header {
        format_version: MODEL_VERSION,
        config: p.config,
        params: p
            .store
            .iter()
            .map(|(name, param)| ManifestEntry {
                name: name.clone(),
                shape: param.value.shape().to_vec(),
            })
            .collect(),
    };
    let mut out = MODEL_MAGIC.to_vec();
    out.extend(serde_json::to_vec(&header).expect("header serializes"));
    for (_, param) in p.store.iter() {
        for &x in param.value.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_model(p: &PolicyParams, path: &Path) -> Result<()> {
    fs::write(path, model_bytes(p)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<PolicyParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_model(&bytes, path)
}

/// Parses a model image; `origin` is only used in error messages.
pub fn parse_model(bytes: &[u8], origin: &Path) -> Result<PolicyParams> {
    if bytes.len() < MODEL_MAGIC.len() || &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
        return Err(Error::format(origin, "magic", "not a model file"));
    }
    let rest = &bytes[MODEL_MAGIC.len()..];
    let mut stream = serde_json::Deserializer::from_slice(rest).into_iter::<Header>();
    let header = match stream.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(Error::format(origin, "header", e.to_string())),
        None => return Err(Error::format(origin, "header", "missing JSON header")),
    };
    let payload = &rest[stream.byte_offset()..];
    if header.format_version != MODEL_VERSION {
        return Err(Error::format(
            origin,
            "format_version",
            format!("unsupported version {}", header.format_version),
        ));
    }
    header
        .config
        .validate()
        .map_err(|e| Error::format(origin, "config", e.to_string()))?;
    let expected: usize = header.params.iter().map(|e| e.shape.iter().product::<usize>() * 4).sum();
    if payload.len() != expected {
        return Err(Error::format(
            origin,
            "payload",
            format!("expected {expected} bytes, found {}", payload.len()),
        ));
    }
    let mut store = ParamStore::new();
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for entry in header.params {
        let n = entry.shape.iter().product();
        let data: Vec<f64> = floats.by_ref().take(n).collect();
        let t = Tensor::new(entry.shape, data).map_err(|e| Error::format(origin, &entry.name, e.to_string()))?;
        store
            .insert(entry.name.clone(), t)
            .map_err(|e| Error::format(origin, &entry.name, e.to_string()))?;
    }
    let reference = PolicyParams::init(header.config, 0)?;
    for (name, p) in reference.store.iter() {
        match store.get(name) {
            Some(q) if q.value.shape() == p.value.shape() => {}
            Some(_) => return Err(Error::format(origin, name, "shape does not match config")),
            None => return Err(Error::format(origin, name, "missing parameter")),
        }
    }
    if store.len() != reference.store.len() {
        return Err(Error::format(origin, "params", "unexpected extra parameters"));
    }
    Ok(PolicyParams {
        config: header.config,
        store,
    })
}

/// Hex SHA-256 of the serialized model.
pub fn model_hash(p: &PolicyParams) -> String {
    hex::encode(Sha256::digest(model_bytes(p)))
}
