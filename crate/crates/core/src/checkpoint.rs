//! Model checkpoints: parameters plus the config and normalisation needed
//! to run them.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamStore};
use crate::ingest::{Standardizer, TargetStats};

pub const CHECKPOINT_VERSION: &str = "physio-kalman-checkpoint-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint version `{found}` is not `{CHECKPOINT_VERSION}`")]
    Version { found: String },
    #[error("checkpoint holds a `{found}` model, expected `{expected}`")]
    Kind { found: String, expected: String },
    #[error("checkpoint feature schema hash mismatch")]
    Schema,
    #[error(transparent)]
    Params(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// FNV-1a over the comma-joined feature names, as hex.
pub fn schema_hash(names: &[String]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in names.join(",").bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub version: String,
    pub kind: String,
    pub config: C,
    pub feature_names: Vec<String>,
    pub schema_hash: String,
    pub features: Standardizer,
    pub target: TargetStats,
    params: serde_json::Value,
}

impl<C: Serialize + DeserializeOwned> Checkpoint<C> {
    pub fn new(
        kind: &str,
        config: C,
        feature_names: Vec<String>,
        features: Standardizer,
        target: TargetStats,
        params: &ParamStore,
    ) -> Result<Self, CheckpointError> {
        Ok(Self {
            version: CHECKPOINT_VERSION.to_string(),
            kind: kind.to_string(),
            config,
            schema_hash: schema_hash(&feature_names),
            feature_names,
            features,
            target,
            params: params.to_value()?,
        })
    }

    pub fn params(&self) -> Result<ParamStore, CheckpointError> {
        Ok(ParamStore::from_value(self.params.clone())?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::Kind {
                found: self.kind.clone(),
                expected: kind.to_string(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let ck: Self = serde_json::from_str(s)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: ck.version });
        }
        if ck.schema_hash != schema_hash(&ck.feature_names) {
            return Err(CheckpointError::Schema);
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()?).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
