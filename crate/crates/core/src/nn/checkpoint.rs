use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::encoder::{DenseLayer, EncoderConfig, MlpParams};
use crate::batch::LabelRange;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "supremix-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One layer as row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub fan_in: usize,
    pub fan_out: usize,
    /// `fan_in × fan_out`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Versioned, byte-stable checkpoint of a trained encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Echo of the run configuration that produced the weights.
    pub config: serde_json::Value,
    pub encoder: EncoderConfig,
    pub label_range: LabelRange,
    pub layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn new(
        params: &MlpParams,
        encoder: &EncoderConfig,
        label_range: LabelRange,
        config: serde_json::Value,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config,
            encoder: encoder.clone(),
            label_range,
            layers: params
                .layers
                .iter()
                .map(|l| LayerRecord {
                    fan_in: l.fan_in(),
                    fan_out: l.fan_out(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn params(&self) -> Result<MlpParams> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let weight = Array2::from_shape_vec((r.fan_in, r.fan_out), r.weight.clone())
                    .map_err(|e| Error::Format(format!("layer {i} weight: {e}")))?;
                if r.bias.len() != r.fan_out {
                    return Err(Error::Format(format!("layer {i} bias has {} entries", r.bias.len())));
                }
                Ok(DenseLayer {
                    weight,
                    bias: Array1::from(r.bias.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = MlpParams { layers };
        if params.layers.is_empty() || params.widths() != self.encoder.widths() {
            return Err(Error::Format("layer shapes do not match the encoder config".into()));
        }
        if !params.is_finite() {
            return Err(Error::Format("non-finite parameters".into()));
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a checkpoint (format `{}`)", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        LabelRange::new(ck.label_range.min(), ck.label_range.max())?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
