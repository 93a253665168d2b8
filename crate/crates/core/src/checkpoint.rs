//! JSON snapshots of trained models, bound to the environment they were
//! trained on.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factorization::Hyper;
use crate::policy::SoftmaxPolicy;
use crate::trainer::{Method, TrainOutput, ValueHead};

pub const CHECKPOINT_FORMAT: &str = "omapl-checkpoint-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint was trained on env {found}, config describes env {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("unsupported checkpoint format `{0}`")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub method: Method,
    pub env_hash: String,
    pub hyper: Hyper,
    /// Empty for BC.
    pub heads: Vec<ValueHead>,
    pub policies: Vec<SoftmaxPolicy>,
}

impl Checkpoint {
    pub fn from_output(out: &TrainOutput, env_hash: impl Into<String>, hyper: Hyper) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            method: out.method,
            env_hash: env_hash.into(),
            hyper,
            heads: out.heads.clone(),
            policies: out.policies.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint holds only finite numbers and strings")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    /// Loads and refuses checkpoints from a different environment.
    pub fn load(path: impl AsRef<Path>, expected_env_hash: &str) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(ck.format));
        }
        if ck.env_hash != expected_env_hash {
            return Err(CheckpointError::HashMismatch { expected: expected_env_hash.into(), found: ck.env_hash });
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvSpec;
    use crate::factorization::{LocalTables, MixingParams, TableShape};
    use crate::trainer::Mixing;

    fn sample() -> Checkpoint {
        let mut tables = LocalTables::zeros(TableShape::uniform(2, 3, 3));
        tables.q[1][4] = 0.1 + 0.2;
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            method: Method::Omapl,
            env_hash: EnvSpec::micro(2, 3).hash(),
            hyper: Hyper::default(),
            heads: vec![ValueHead { agents: vec![0, 1], tables, mixing: Mixing::Learned(MixingParams::unit(2)) }],
            policies: vec![SoftmaxPolicy::uniform(3, 3); 2],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path, &ck.env_hash).unwrap(), ck);
    }

    #[test]
    fn hash_mismatch_reports_both() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        sample().save(&path).unwrap();
        let other = EnvSpec::gridworld_4x4().hash();
        let err = Checkpoint::load(&path, &other).unwrap_err().to_string();
        assert!(err.contains(&other) && err.contains(&EnvSpec::micro(2, 3).hash()));
    }
}
