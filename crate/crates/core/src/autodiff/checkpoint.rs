//! JSON parameter checkpoints.
//!
//! Layout:
//!
//! ```json
//! {"format": "refcast-checkpoint", "version": 1, "config_hash": "<sha256>",
//!  "config": {...}, "params": {"name": {"shape": [..], "values": [..]}}}
//! ```
//!
//! `config_hash` is the SHA-256 of the compact JSON encoding of `config`
//! (object keys sorted). Loading rejects a file whose hash does not match
//! its own config, or whose config differs from the caller's.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::{AutodiffError, Tensor};

pub const CHECKPOINT_FORMAT: &str = "refcast-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub params: BTreeMap<String, StoredTensor>,
}

pub fn config_hash<C: Serialize>(config: &C) -> Result<String, AutodiffError> {
    let value = serde_json::to_value(config).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
    Ok(hash_value(&value))
}

fn hash_value(value: &serde_json::Value) -> String {
    // serde_json's default map is ordered, so this encoding is canonical.
    let text = value.to_string();
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_store<C: Serialize>(store: &ParamStore, config: &C) -> Result<Self, AutodiffError> {
        let config = serde_json::to_value(config).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        let params = store
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    StoredTensor { shape: p.value.shape().to_vec(), values: p.value.data().to_vec() },
                )
            })
            .collect();
        Ok(Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config_hash: hash_value(&config),
            config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        let text = serde_json::to_string(self).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(AutodiffError::ConfigMismatch(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        if hash_value(&ckpt.config) != ckpt.config_hash {
            return Err(AutodiffError::ConfigMismatch("config hash does not match stored config".into()));
        }
        Ok(ckpt)
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C, AutodiffError> {
        serde_json::from_value(self.config.clone()).map_err(|e| AutodiffError::ConfigMismatch(e.to_string()))
    }

    /// Fails unless `expected` hashes to the stored config hash.
    pub fn verify_config<C: Serialize>(&self, expected: &C) -> Result<(), AutodiffError> {
        let h = config_hash(expected)?;
        if h != self.config_hash {
            return Err(AutodiffError::ConfigMismatch(format!(
                "checkpoint config hash {} != expected {}",
                self.config_hash, h
            )));
        }
        Ok(())
    }

    /// Overwrites every parameter in `store`; names and shapes must match exactly.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<(), AutodiffError> {
        if self.params.len() != store.len() {
            return Err(AutodiffError::ConfigMismatch(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for p in store.iter_mut() {
            let stored = self
                .params
                .get(&p.name)
                .ok_or_else(|| AutodiffError::ConfigMismatch(format!("missing parameter {}", p.name)))?;
            if stored.shape != p.value.shape() {
                return Err(AutodiffError::ConfigMismatch(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    stored.shape,
                    p.value.shape()
                )));
            }
            p.value = Tensor::new(stored.shape.clone(), stored.values.clone())?;
        }
        Ok(())
    }
}
