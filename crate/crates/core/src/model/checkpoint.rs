//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` LE format version, `u64` LE header length, a JSON
//! header (config snapshot, input hashes, tensor names and shapes), then every
//! tensor's values as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CMVCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    seed: u64,
    vocabulary_hash: String,
    embedding_hash: String,
    run_config: serde_json::Value,
    tensors: Vec<TensorHeader>,
}

/// A model plus the hashes of the vocabulary and embedding file it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocabulary_hash: String,
    pub embedding_hash: String,
    pub run_config: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.model.tensors();
        let header = Header {
            model_config: self.model.config.clone(),
            seed: self.model.seed,
            vocabulary_hash: self.vocabulary_hash.clone(),
            embedding_hash: self.embedding_hash.clone(),
            run_config: self.run_config.clone(),
            tensors: tensors
                .iter()
                .map(|t| TensorHeader {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let values: usize = tensors.iter().map(|t| t.data.len()).sum();

        let mut out = Vec::with_capacity(20 + header.len() + 8 * values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &tensors {
            for x in t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes
            .get(20..)
            .filter(|b| b.len() >= header_len)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let data = &body[header_len..];

        header
            .model_config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut model = Model::init(header.model_config.clone(), header.seed)?;

        let expected: Vec<(String, Vec<usize>)> = model
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.shape))
            .collect();
        if expected.len() != header.tensors.len()
            || expected
                .iter()
                .zip(&header.tensors)
                .any(|((n, s), h)| *n != h.name || *s != h.shape)
        {
            return Err(bad("tensor layout does not match the model config"));
        }
        let total: usize = model.tensors().iter().map(|t| t.data.len()).sum();
        if data.len() != total * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} tensor bytes, found {}",
                total * 8,
                data.len()
            )));
        }
        let mut values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for slot in model.tensors_mut() {
            for x in slot.iter_mut() {
                *x = values.next().expect("length checked above");
            }
        }

        Ok(Checkpoint {
            model,
            vocabulary_hash: header.vocabulary_hash,
            embedding_hash: header.embedding_hash,
            run_config: header.run_config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Refuses a checkpoint trained against different inputs.
    pub fn verify_inputs(&self, vocabulary_hash: &str, embedding_hash: &str) -> Result<()> {
        if self.vocabulary_hash != vocabulary_hash {
            return Err(Error::validation(format!(
                "checkpoint vocabulary hash {} does not match {}",
                self.vocabulary_hash, vocabulary_hash
            )));
        }
        if self.embedding_hash != embedding_hash {
            return Err(Error::validation(format!(
                "checkpoint embedding hash {} does not match {}",
                self.embedding_hash, embedding_hash
            )));
        }
        Ok(())
    }
}
