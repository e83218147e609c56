//! JSON checkpoints of a trained model.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ChildNet, ScaModel, TracePoint, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::schema::FeatureSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTensor {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaCheckpoint {
    pub schema_fingerprint: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub nets: Vec<Vec<LayerTensor>>,
    /// Row-major `parents × children`.
    pub gate_logits: Vec<f64>,
    pub config: TrainConfig,
    pub loss_trace: Vec<TracePoint>,
    pub clipped: u64,
}

impl ScaCheckpoint {
    pub fn from_trained(trained: &TrainedModel, schema: &FeatureSchema) -> Result<Self> {
        let m = &trained.model;
        if schema.state_dim() != m.state_dim() || schema.action_dim() != m.action_dim() {
            return Err(Error::DimensionMismatch {
                expected: schema.parent_dim(),
                actual: m.parent_dim(),
                context: "checkpoint schema",
            });
        }
        let nets = m
            .nets()
            .iter()
            .map(|net| {
                (0..net.num_layers())
                    .map(|l| {
                        let w = net.weight(l);
                        LayerTensor {
                            rows: w.nrows(),
                            cols: w.ncols(),
                            weights: w.iter().copied().collect(),
                            bias: net.bias(l).to_vec(),
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(ScaCheckpoint {
            schema_fingerprint: schema.fingerprint(),
            state_dim: m.state_dim(),
            action_dim: m.action_dim(),
            hidden: m.hidden().to_vec(),
            nets,
            gate_logits: m.logits().iter().copied().collect(),
            config: trained.config.clone(),
            loss_trace: trained.trace.clone(),
            clipped: trained.clipped,
        })
    }

    pub fn to_trained(&self) -> Result<TrainedModel> {
        let parents = self.state_dim + self.action_dim;
        let nets = self
            .nets
            .iter()
            .map(|layers| {
                let mut sizes = Vec::with_capacity(layers.len() + 1);
                let mut params = Vec::new();
                for (l, t) in layers.iter().enumerate() {
                    if t.weights.len() != t.rows * t.cols || t.bias.len() != t.cols {
                        return Err(Error::InvalidConfig(format!("layer {l} tensor has inconsistent length")));
                    }
                    if l == 0 {
                        sizes.push(t.rows);
                    } else if sizes.last() != Some(&t.rows) {
                        return Err(Error::InvalidConfig(format!("layer {l} does not chain")));
                    }
                    sizes.push(t.cols);
                    params.extend_from_slice(&t.weights);
                    params.extend_from_slice(&t.bias);
                }
                ChildNet::from_parts(sizes, params)
                    .ok_or_else(|| Error::InvalidConfig("malformed network in checkpoint".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let logits = Array2::from_shape_vec((parents, self.action_dim), self.gate_logits.clone()).map_err(|_| {
            Error::DimensionMismatch {
                expected: parents * self.action_dim,
                actual: self.gate_logits.len(),
                context: "checkpoint gate logits",
            }
        })?;
        let model = ScaModel::from_parts(self.state_dim, self.action_dim, self.hidden.clone(), nets, logits)?;
        Ok(TrainedModel {
            model,
            config: self.config.clone(),
            trace: self.loss_trace.clone(),
            clipped: self.clipped,
        })
    }

    /// Fails unless the checkpoint was trained against `schema`.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        let fp = schema.fingerprint();
        if fp != self.schema_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: fp,
                found: self.schema_fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
