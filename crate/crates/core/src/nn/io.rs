//! Model files.
//!
//! A model is stored as one JSON document:
//!
//! ```text
//! {
//!   "format": "cardiff-model",
//!   "version": 1,
//!   "kind": "eps" | "base" | "pinn" | "classifier" | ...,
//!   "architecture": { input_dim, time_embed_dim, cond_dim, hidden, output_dim, activation, skip_connections },
//!   "seed": u64,
//!   "train": TrainConfig | null,
//!   "input_norm" / "output_norm" / "cond_norm": { mean: [..], scale: [..] } | null,
//!   "schedule": { steps, beta_min, beta_max, shape } | null,
//!   "params": [f64; parameter_count]
//! }
//! ```
//!
//! Parameters are laid out layer by layer, weights (row-major, `out x in`)
//! followed by biases. Floats are written with shortest round-trip formatting
//! so a load reproduces every bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, FeedForwardNet, Normalizer, TrainConfig};
use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "cardiff-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub architecture: Architecture,
    pub seed: u64,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub input_norm: Option<Normalizer>,
    #[serde(default)]
    pub output_norm: Option<Normalizer>,
    #[serde(default)]
    pub cond_norm: Option<Normalizer>,
    #[serde(default)]
    pub schedule: Option<ScheduleConfig>,
    pub params: Vec<f64>,
}

impl ModelFile {
    pub fn new(kind: &str, net: &FeedForwardNet, seed: u64) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            kind: kind.to_string(),
            architecture: net.architecture().clone(),
            seed,
            train: None,
            input_norm: None,
            output_norm: None,
            cond_norm: None,
            schedule: None,
            params: net.params().to_vec(),
        }
    }

    pub fn network(&self) -> Result<FeedForwardNet> {
        FeedForwardNet::from_params(self.architecture.clone(), self.params.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Data(format!("not a model file (format {:?})", file.format)));
        }
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported model version {}", file.version)));
        }
        if file.params.len() != file.architecture.parameter_count() {
            return Err(Error::DimensionMismatch {
                what: "model parameters",
                expected: file.architecture.parameter_count(),
                got: file.params.len(),
            });
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
