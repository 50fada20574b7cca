//! `V2VCKPT1` checkpoints: magic, a JSON header with the model
//! configuration and optimizer settings, then named `f32` tensors.
//! Optimizer moments are stored as `adam.m.<name>` and `adam.v.<name>`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::features::io::{expect_end, expect_magic, get_f32s, get_u32, put_f32s, put_u32};
use crate::model::{ModelConfig, Vid2Voc};
use crate::nn::{ParamKind, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"V2VCKPT1";
const MAX_HEADER: u32 = 1 << 20;
const MAX_NAME: u32 = 4096;
const MAX_RANK: u32 = 8;
const MAX_ELEMENTS: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Vid2Voc<f32>,
    pub optimizer: Option<Adam<f32>>,
}

fn put_tensor(w: &mut impl Write, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    put_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    put_u32(w, shape.len() as u32)?;
    for &d in shape {
        put_u32(w, d as u32)?;
    }
    put_f32s(w, data.iter().map(|&x| x as f64))
}

pub fn write_checkpoint(w: &mut impl Write, model: &Vid2Voc<f32>, optimizer: Option<&Adam<f32>>) -> Result<()> {
    let header = Header {
        model: model.config().clone(),
        optimizer: optimizer.map(|a| OptimizerHeader {
            learning_rate: a.cfg.learning_rate,
            beta1: a.cfg.beta1,
            beta2: a.cfg.beta2,
            eps: a.cfg.eps,
            step: a.step_count(),
        }),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, json.len() as u32)?;
    w.write_all(&json)?;
    let store = model.params();
    let weights = store.ids().filter(|&id| store.kind(id) == ParamKind::Weight).count();
    let count = store.len() + if optimizer.is_some() { 2 * weights } else { 0 };
    put_u32(w, count as u32)?;
    for id in store.ids() {
        let t = store.get(id);
        put_tensor(w, store.name(id), t.shape(), t.data())?;
    }
    if let Some(adam) = optimizer {
        let (m, v) = adam.moments();
        for (prefix, moments) in [("adam.m.", m), ("adam.v.", v)] {
            for id in store.ids().filter(|&id| store.kind(id) == ParamKind::Weight) {
                let name = format!("{prefix}{}", store.name(id));
                put_tensor(w, &name, store.get(id).shape(), &moments[id.index()])?;
            }
        }
    }
    Ok(())
}

const WHAT: &str = "checkpoint";

fn read_tensor(r: &mut impl Read) -> Result<(String, Tensor<f32>)> {
    let len = get_u32(r, WHAT)?;
    if len > MAX_NAME {
        return Err(Error::malformed(WHAT, "tensor name too long"));
    }
    let mut name = vec![0u8; len as usize];
    r.read_exact(&mut name).map_err(|_| Error::malformed(WHAT, "truncated"))?;
    let name = String::from_utf8(name).map_err(|_| Error::malformed(WHAT, "tensor name is not UTF-8"))?;
    let rank = get_u32(r, WHAT)?;
    if rank > MAX_RANK {
        return Err(Error::malformed(WHAT, "tensor rank too large"));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(get_u32(r, WHAT)? as usize);
    }
    let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).filter(|&n| n <= MAX_ELEMENTS);
    let Some(numel) = numel else {
        return Err(Error::malformed(WHAT, "tensor too large"));
    };
    let data = get_f32s(r, numel, WHAT)?.into_iter().map(|x| x as f32).collect();
    Ok((name, Tensor::new(&shape, data)?))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    expect_magic(r, CHECKPOINT_MAGIC, WHAT)?;
    let len = get_u32(r, WHAT)?;
    if len > MAX_HEADER {
        return Err(Error::malformed(WHAT, "header too long"));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(|_| Error::malformed(WHAT, "truncated"))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::malformed(WHAT, format!("bad header: {e}")))?;
    let template = Vid2Voc::<f32>::new(header.model.clone(), 0)?;
    let count = get_u32(r, WHAT)? as usize;
    let mut store = ParamStore::<f32>::new();
    let mut extra = Vec::new();
    for i in 0..count {
        let (name, t) = read_tensor(r)?;
        if i < template.params().len() {
            let kind = template.params().find(&name).map(|id| template.params().kind(id));
            store.add(name, kind.unwrap_or(ParamKind::Weight), t)?;
        } else {
            extra.push((name, t));
        }
    }
    expect_end(r, WHAT)?;
    let model = Vid2Voc::from_parts(header.model, store)?;
    let optimizer = match header.optimizer {
        None if extra.is_empty() => None,
        None => return Err(Error::malformed(WHAT, "moment tensors without optimizer header")),
        Some(h) => {
            let store = model.params();
            let mut m = vec![Vec::new(); store.len()];
            let mut v = vec![Vec::new(); store.len()];
            for (name, t) in extra {
                let (slot, base) = if let Some(b) = name.strip_prefix("adam.m.") {
                    (&mut m, b)
                } else if let Some(b) = name.strip_prefix("adam.v.") {
                    (&mut v, b)
                } else {
                    return Err(Error::malformed(WHAT, format!("unexpected tensor {name}")));
                };
                let Some(id) = store.find(base) else {
                    return Err(Error::ConfigMismatch(format!("moment for unknown parameter {base}")));
                };
                if t.shape() != store.get(id).shape() {
                    return Err(Error::ConfigMismatch(format!("moment {name} has the wrong shape")));
                }
                slot[id.index()] = t.into_data();
            }
            let cfg = AdamConfig {
                learning_rate: h.learning_rate,
                beta1: h.beta1,
                beta2: h.beta2,
                eps: h.eps,
            };
            Some(Adam::from_state(cfg, h.step, m, v, store)?)
        }
    };
    Ok(Checkpoint { model, optimizer })
}

pub fn save_checkpoint(path: &std::path::Path, model: &Vid2Voc<f32>, optimizer: Option<&Adam<f32>>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut w, model, optimizer)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_checkpoint(&mut std::io::BufReader::new(f))
}
