use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{WayConfig, WayModel};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::represent::Standardizer;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Everything needed to run a trained model: architecture, input
/// standardization and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: WayConfig,
    pub grid_cell_size: f64,
    pub standardizer: Standardizer,
    params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(model: &WayModel, grid_cell_size: f64, standardizer: Standardizer) -> Self {
        let params = model
            .names()
            .iter()
            .zip(model.params())
            .map(|(name, t)| NamedTensor {
                name: name.clone(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: *model.config(),
            grid_cell_size,
            standardizer,
            params,
        }
    }

    pub fn model(&self) -> Result<WayModel> {
        let named = self
            .params
            .iter()
            .map(|p| Ok((p.name.clone(), Tensor::new(p.shape.clone(), p.data.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        WayModel::from_named(self.config, named)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::SchemaVersion {
                found,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}
