//! Binary checkpoint container.
//!
//! ```text
//! magic "CXRNETCK" | version u32 | section count u32
//! section*: name_len u32 | name | kind u8 | payload
//!   kind 0 (tensor): rank u32 | dims u64* | f64*
//!   kind 1 (json):   len u64 | utf-8 bytes
//! SHA-256 of everything above (32 bytes)
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamConfig, AdamState, EvalRecord, Schedule, TrainConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"CXRNETCK";
const VERSION: u32 = 1;
const KIND_TENSOR: u8 = 0;
const KIND_JSON: u8 = 1;
const DIGEST_LEN: usize = 32;

/// Complete training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub ordering_id: String,
    pub updates: usize,
    pub schedule: Schedule,
    pub history: Vec<EvalRecord>,
}

impl Checkpoint {
    pub fn new(model: Model, config: TrainConfig, ordering_id: String) -> Self {
        let adam = {
            let [enc, head] = model.param_sets();
            let shapes: Vec<&[usize]> = enc.iter().chain(head.iter()).map(|(_, t)| t.shape()).collect();
            AdamState::new(config.adam, shapes)
        };
        Checkpoint {
            model,
            adam,
            config,
            ordering_id,
            updates: 0,
            schedule: Schedule::new(),
            history: Vec::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    model_config: ModelConfig,
    labels: Vec<String>,
    ordering_id: String,
    train_config: TrainConfig,
    updates: usize,
    schedule: Schedule,
    history: Vec<EvalRecord>,
    adam_config: AdamConfig,
    adam_step: u64,
    running_initialized: Vec<bool>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_name(out: &mut Vec<u8>, name: &str, kind: u8) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    out.push(kind);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_name(out, name, KIND_TENSOR);
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn running_tensors(model: &Model) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (i, r) in model.encoder().running_stats().iter().enumerate() {
        let c = r.mean.len();
        out.push((format!("running/{i}/mean"), Tensor::new(vec![c], r.mean.clone()).expect("length")));
        out.push((format!("running/{i}/var"), Tensor::new(vec![c], r.var.clone()).expect("length")));
    }
    out
}

/// Serialize to bytes.
pub fn write_checkpoint(c: &Checkpoint) -> Result<Vec<u8>> {
    let meta = Meta {
        model_config: c.model.config().clone(),
        labels: c.model.labels().to_vec(),
        ordering_id: c.ordering_id.clone(),
        train_config: c.config.clone(),
        updates: c.updates,
        schedule: c.schedule.clone(),
        history: c.history.clone(),
        adam_config: c.adam.config,
        adam_step: c.adam.step,
        running_initialized: c.model.encoder().running_stats().iter().map(|r| r.initialized).collect(),
    };
    let json = serde_json::to_vec(&meta)?;
    let [enc, head] = c.model.param_sets();
    let params: Vec<(&str, &Tensor)> = enc.iter().chain(head.iter()).collect();
    let running = running_tensors(&c.model);
    let sections = 1 + params.len() * 3 + running.len();

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, sections as u32);
    put_name(&mut out, "meta", KIND_JSON);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in &params {
        put_tensor(&mut out, &format!("param/{name}"), t);
    }
    for (name, t) in &running {
        put_tensor(&mut out, name, t);
    }
    for ((name, _), (m, v)) in params.iter().zip(c.adam.m.iter().zip(&c.adam.v)) {
        put_tensor(&mut out, &format!("adam_m/{name}"), m);
        put_tensor(&mut out, &format!("adam_v/{name}"), v);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

enum Section {
    Tensor(Tensor),
    Json(Vec<u8>),
}

/// Parse bytes produced by [`write_checkpoint`], verifying the digest first.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("integrity digest mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut sections = std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?
            .to_string();
        let kind = r.take(1)?[0];
        let section = match kind {
            KIND_TENSOR => {
                let rank = r.u32()? as usize;
                let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let n: usize = shape.iter().product();
                let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                Section::Tensor(Tensor::new(shape, data)?)
            }
            KIND_JSON => {
                let len = r.u64()? as usize;
                Section::Json(r.take(len)?.to_vec())
            }
            k => return Err(Error::Checkpoint(format!("section `{name}` has unknown kind {k}"))),
        };
        sections.insert(name, section);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after the last section".into()));
    }
    let meta: Meta = match sections.get("meta") {
        Some(Section::Json(b)) => serde_json::from_slice(b)?,
        _ => return Err(Error::Checkpoint("missing meta section".into())),
    };
    let mut tensor = |name: &str, like: &Tensor| -> Result<Tensor> {
        match sections.remove(name) {
            Some(Section::Tensor(t)) if t.shape() == like.shape() => Ok(t),
            Some(Section::Tensor(t)) => Err(Error::Checkpoint(format!(
                "`{name}` has shape {:?}, expected {:?}",
                t.shape(),
                like.shape()
            ))),
            _ => Err(Error::Checkpoint(format!("missing tensor `{name}`"))),
        }
    };

    let mut model = Model::zero_head(meta.model_config, meta.labels, 0)?;
    let mut m = Vec::new();
    let mut v = Vec::new();
    for set in model.param_sets_mut() {
        for (name, t) in set.iter_mut() {
            *t = tensor(&format!("param/{name}"), t)?;
            m.push(tensor(&format!("adam_m/{name}"), t)?);
            v.push(tensor(&format!("adam_v/{name}"), t)?);
        }
    }
    let running = model.encoder_mut().running_stats_mut();
    if meta.running_initialized.len() != running.len() {
        return Err(Error::Checkpoint("running statistics count mismatch".into()));
    }
    for (i, (rs, &init)) in running.iter_mut().zip(&meta.running_initialized).enumerate() {
        let like = Tensor::zeros(vec![rs.mean.len()]);
        rs.mean = tensor(&format!("running/{i}/mean"), &like)?.into_data();
        rs.var = tensor(&format!("running/{i}/var"), &like)?.into_data();
        rs.initialized = init;
    }
    Ok(Checkpoint {
        model,
        adam: AdamState {
            config: meta.adam_config,
            step: meta.adam_step,
            m,
            v,
        },
        config: meta.train_config,
        ordering_id: meta.ordering_id,
        updates: meta.updates,
        schedule: meta.schedule,
        history: meta.history,
    })
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(c)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
