//! JSON checkpoint: model config, input standardization, selection metadata, weights.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::weights::ModelWeights;
use crate::autodiff::Tensor;
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::training::CheckpointMeta;

pub const CHECKPOINT_FORMAT: &str = "scawave-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    model: ModelConfig,
    #[serde(default)]
    standardizer: Option<Standardizer>,
    #[serde(default)]
    meta: Option<CheckpointMeta>,
    params: BTreeMap<String, StoredTensor>,
}

/// Trained weights plus everything needed to reproduce their inputs.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    pub standardizer: Option<Standardizer>,
    pub meta: Option<CheckpointMeta>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.weights.config().clone(),
            standardizer: self.standardizer.clone(),
            meta: self.meta.clone(),
            params: self
                .weights
                .iter()
                .map(|p| {
                    (
                        p.name.clone(),
                        StoredTensor {
                            shape: p.tensor.shape().to_vec(),
                            data: p.tensor.data().to_vec(),
                        },
                    )
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a checkpoint (format {:?})", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        file.model.validate()?;
        let tensors = file
            .params
            .into_iter()
            .map(|(name, t)| {
                Tensor::new(t.shape, t.data)
                    .map(|tensor| (name.clone(), tensor))
                    .map_err(|e| Error::Format(format!("parameter {name}: {e}")))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            weights: ModelWeights::from_tensors(&file.model, tensors)?,
            standardizer: file.standardizer,
            meta: file.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
