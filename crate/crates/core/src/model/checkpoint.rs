//! Binary checkpoint container.
//!
//! Layout: `b"INUC"`, `u32` format version, `u64` header length, UTF-8 JSON
//! header, then raw little-endian `f32` blobs in manifest order. Offsets in the
//! manifest are relative to the first blob byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::graph::Model;
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"INUC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub seed: u64,
    /// SHA-256 over the per-epoch train losses as little-endian `f64`.
    pub loss_history_sha256: String,
    pub adam: AdamConfig,
    pub lambda: f64,
    /// Indexed by class id; empty when unknown.
    #[serde(default)]
    pub class_names: Vec<String>,
}

impl TrainingMeta {
    pub fn digest(losses: &[f64]) -> String {
        let mut h = Sha256::new();
        for l in losses {
            h.update(l.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<AdamState<f32>>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    running_stats_ready: Vec<bool>,
    tensors: Vec<Entry>,
    optimizer: Option<OptimizerHeader>,
    meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
    config: AdamConfig,
}

pub fn encode_checkpoint(model: &Model<f32>, optimizer: Option<&AdamState<f32>>, meta: &TrainingMeta) -> Result<Vec<u8>> {
    let mut tensors: Vec<(String, &Tensor<f32>)> =
        model.params().iter().map(|(n, p)| (n.to_string(), &p.value)).collect();
    if let Some(adam) = optimizer {
        for (k, &slot) in adam.slots().iter().enumerate() {
            let name = model.params().name(slot);
            tensors.push((format!("adam.m.{name}"), &adam.m[k]));
            tensors.push((format!("adam.v.{name}"), &adam.v[k]));
        }
    }
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = Entry { name: name.clone(), dtype: "f32".into(), shape: t.shape().to_vec(), offset };
            offset += 4 * t.len() as u64;
            e
        })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        running_stats_ready: model.running_stats_ready().to_vec(),
        tensors: entries,
        optimizer: optimizer.map(|a| OptimizerHeader { step: a.step, config: a.config }),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model<f32>,
    optimizer: Option<&AdamState<f32>>,
    meta: &TrainingMeta,
) -> Result<()> {
    fs::write(path, encode_checkpoint(model, optimizer, meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?, None)
}

/// Loads the stored tensors into a model built from `config` instead of the
/// stored configuration; every tensor must match its counterpart's shape.
pub fn load_checkpoint_with_config(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?, Some(config))
}

fn take<'a>(bytes: &'a [u8], at: usize, n: usize, what: &str) -> Result<&'a [u8]> {
    bytes.get(at..at + n).ok_or_else(|| {
        Error::TruncatedCheckpoint(format!("{what} needs bytes {}..{} but the file has {}", at, at + n, bytes.len()))
    })
}

pub fn decode_checkpoint(bytes: &[u8], config: Option<&ModelConfig>) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let version = u32::from_le_bytes(take(bytes, 4, 4, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion { found: version, supported: FORMAT_VERSION });
    }
    let header_len = u64::from_le_bytes(take(bytes, 8, 8, "header length")?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(take(bytes, 16, header_len, "header")?)?;
    let blobs = &bytes[16 + header_len..];

    let config = config.cloned().unwrap_or(header.config);
    let mut model = Model::build(config, 0)?;
    let read = |e: &Entry| -> Result<Tensor<f32>> {
        if e.dtype != "f32" {
            return Err(Error::Data(format!("tensor {} has unsupported dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let raw = take(blobs, e.offset as usize, 4 * n, &e.name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::from_vec(&e.shape, data)
    };
    let find = |name: &str| header.tensors.iter().find(|e| e.name == name);

    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    for (idx, name) in names.iter().enumerate() {
        let entry = find(name).ok_or_else(|| Error::shape(format!("checkpoint has no tensor {name}")))?;
        let t = read(entry)?;
        let param = model.params_mut().get_mut(idx);
        if t.shape() != param.value.shape() {
            return Err(Error::shape(format!(
                "tensor {name} has shape {:?} in the checkpoint but {:?} in the model",
                t.shape(),
                param.value.shape()
            )));
        }
        param.value = t;
    }
    let param_count = names.len();
    let adam_count = header.tensors.iter().filter(|e| e.name.starts_with("adam.")).count();
    if header.tensors.len() != param_count + adam_count {
        return Err(Error::shape("checkpoint holds tensors the model does not define"));
    }
    model.set_running_stats_ready(header.running_stats_ready)?;

    let optimizer = match header.optimizer {
        None => None,
        Some(opt) => {
            let mut state = AdamState::new(model.params(), opt.config);
            let slots = state.slots().to_vec();
            let mut m = Vec::with_capacity(slots.len());
            let mut v = Vec::with_capacity(slots.len());
            for &slot in &slots {
                let name = model.params().name(slot);
                for (prefix, dst) in [("adam.m.", &mut m), ("adam.v.", &mut v)] {
                    let key = format!("{prefix}{name}");
                    let e = find(&key).ok_or_else(|| Error::shape(format!("checkpoint has no tensor {key}")))?;
                    let t = read(e)?;
                    if t.shape() != model.params().get(slot).value.shape() {
                        return Err(Error::shape(format!("optimizer tensor {key} has the wrong shape")));
                    }
                    dst.push(t);
                }
            }
            state = AdamState::from_parts(opt.step, opt.config, m, v, slots);
            Some(state)
        }
    };
    Ok(Checkpoint { model, optimizer, meta: header.meta })
}
