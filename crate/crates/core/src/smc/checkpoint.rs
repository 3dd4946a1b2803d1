//! Versioned JSON checkpoints of a running particle filter.

use super::{History, ParticleSet};
use crate::error::{BanditError, Result};
use crate::model::ObservationModel;
use crate::rng::BanditRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Hex SHA-256 of the model's canonical JSON encoding.
pub fn model_hash(model: &ObservationModel) -> String {
    let bytes = serde_json::to_vec(model).expect("model serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub t: u64,
    pub particle_count: usize,
    pub model_hash: String,
    pub set: ParticleSet,
    pub history: Option<History>,
    pub rng: BanditRng,
}

impl Checkpoint {
    pub fn capture(set: &ParticleSet, history: Option<&History>, rng: &BanditRng) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            t: set.time(),
            particle_count: set.len(),
            model_hash: model_hash(set.model()),
            set: set.clone(),
            history: history.cloned(),
            rng: rng.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(text)?;
        cp.validate()?;
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(BanditError::InvalidInput(format!("unsupported checkpoint version {}", self.version)));
        }
        if self.model_hash != model_hash(self.set.model()) {
            return Err(BanditError::InvalidInput("checkpoint model hash mismatch".into()));
        }
        if self.particle_count != self.set.len() || self.t != self.set.time() {
            return Err(BanditError::InvalidInput("checkpoint header disagrees with particle state".into()));
        }
        let sum: f64 = self.set.weights().iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(BanditError::InvalidInput("checkpoint weights are not normalized".into()));
        }
        Ok(())
    }
}
