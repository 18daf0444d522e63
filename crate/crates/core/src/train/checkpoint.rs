//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"OOGGENCK"                 magic, 8 bytes
//! u32                         format version
//! u64                         metadata length n
//! [u8; n]                     metadata, UTF-8 JSON
//! f64 * ...                   parameter tensors, row-major, canonical order
//! f64 * ...                   optional Adam moments m then v, same order
//! [u8; 32]                    sha256 of every preceding byte
//! ```
//!
//! The canonical tensor order is the one returned by
//! [`ParamSet::tensors`](crate::model::ParamSet::tensors).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GenError, Result};
use crate::model::params::{ModelConfig, ModelParams, ParamSet};
use crate::train::adam::{AdamConfig, OptimizerState};
use crate::train::HyperParams;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"OOGGENCK";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocabulary_hash: String,
    pub hyperparams: Option<HyperParams>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerInfo {
    step: u64,
    adam: AdamConfig,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    vocabulary_hash: String,
    model: ModelConfig,
    hyperparams: Option<HyperParams>,
    tensors: Vec<TensorInfo>,
    optimizer: Option<OptimizerInfo>,
}

fn put_tensors(buf: &mut Vec<u8>, set: &ParamSet) {
    for (_, m) in set.tensors() {
        for x in m.as_slice() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub fn checkpoint_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let meta = Metadata {
        vocabulary_hash: ck.vocabulary_hash.clone(),
        model: ck.params.config.clone(),
        hyperparams: ck.hyperparams.clone(),
        tensors: ck
            .params
            .weights
            .tensors()
            .into_iter()
            .map(|(name, m)| TensorInfo {
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
        optimizer: ck.optimizer.as_ref().map(|o| OptimizerInfo {
            step: o.step,
            adam: o.config,
        }),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    put_tensors(&mut buf, &ck.params.weights);
    if let Some(o) = &ck.optimizer {
        put_tensors(&mut buf, &o.m);
        put_tensors(&mut buf, &o.v);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

/// Writes through a temporary file and a rename, so a failed write never
/// leaves a partial checkpoint at `path`.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = checkpoint_bytes(ck)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| GenError::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &bytes).map_err(|e| GenError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| GenError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(GenError::corrupt("checkpoint", "truncated")),
        }
    }

    fn fill(&mut self, set: &mut ParamSet) -> Result<()> {
        for (_, m) in set.tensors_mut() {
            let raw = self.take(8 * m.as_slice().len())?;
            for (x, chunk) in m.as_mut_slice().iter_mut().zip(raw.chunks_exact(8)) {
                *x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
        }
        Ok(())
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 12 + 32 {
        return Err(GenError::corrupt("checkpoint", "truncated"));
    }
    if &bytes[..8] != MAGIC {
        return Err(GenError::corrupt("checkpoint", "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(GenError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(GenError::ChecksumMismatch("checkpoint".into()));
    }
    let mut r = Reader { bytes: body, pos: 12 };
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| GenError::corrupt("checkpoint", "metadata length"))?;
    let meta: Metadata = serde_json::from_slice(r.take(len)?)?;
    meta.model.validate()?;

    let mut weights = ParamSet::zeros(&meta.model);
    let expected: Vec<(&str, (usize, usize))> = weights.tensors().into_iter().map(|(n, m)| (n, m.shape())).collect();
    let found: Vec<(&str, (usize, usize))> = meta.tensors.iter().map(|t| (t.name.as_str(), (t.rows, t.cols))).collect();
    if expected != found {
        return Err(GenError::corrupt("checkpoint", "tensor table does not match the model config"));
    }
    r.fill(&mut weights)?;
    let optimizer = match meta.optimizer {
        Some(info) => {
            let mut o = OptimizerState::new(&meta.model, info.adam);
            o.step = info.step;
            r.fill(&mut o.m)?;
            r.fill(&mut o.v)?;
            Some(o)
        }
        None => None,
    };
    if r.pos != body.len() {
        return Err(GenError::corrupt("checkpoint", "trailing bytes"));
    }
    Ok(Checkpoint {
        params: ModelParams {
            config: meta.model,
            weights,
        },
        vocabulary_hash: meta.vocabulary_hash,
        hyperparams: meta.hyperparams,
        optimizer,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| GenError::io(path, e))?;
    parse_checkpoint(&bytes)
}

/// Loads and checks that the checkpoint was trained on `vocabulary_hash`.
pub fn load_checkpoint_for(path: &Path, vocabulary_hash: &str) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.vocabulary_hash != vocabulary_hash {
        return Err(GenError::VocabularyMismatch {
            found: ck.vocabulary_hash,
            expected: vocabulary_hash.to_string(),
        });
    }
    Ok(ck)
}

