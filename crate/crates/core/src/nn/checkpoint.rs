//! JSON checkpoints.
//!
//! ```json
//! { "format": "attn-thermo-checkpoint", "version": 1, "precision": "f64",
//!   "config": { ...TransformerConfig... },
//!   "params": [ { "name": "tok_emb", "shape": [20, 128], "data": [ ... ] }, ... ] }
//! ```
//!
//! Parameter data is always stored as f64 in store order, which round-trips
//! both precisions exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::{Scalar, Tensor};
use super::transformer::{Transformer, TransformerConfig};

pub const CHECKPOINT_FORMAT: &str = "attn-thermo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub precision: String,
    pub config: TransformerConfig,
    pub params: Vec<CheckpointParam>,
}

impl Checkpoint {
    pub fn from_model<F: Scalar>(model: &Transformer<F>) -> Self {
        let store = model.params();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            precision: F::NAME.into(),
            config: model.config().clone(),
            params: store
                .ids()
                .map(|id| CheckpointParam {
                    name: store.name(id).into(),
                    shape: store.get(id).shape().to_vec(),
                    data: store.get(id).to_f64_vec(),
                })
                .collect(),
        }
    }

    pub fn into_model<F: Scalar>(self) -> Result<Transformer<F>> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                self.format, self.version
            )));
        }
        let mut model = Transformer::<F>::new(self.config)?;
        if model.params().len() != self.params.len() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.params.len(),
                model.params().len()
            )));
        }
        let ids: Vec<_> = model.params().ids().collect();
        for (id, p) in ids.into_iter().zip(self.params) {
            let store = model.params_mut();
            if store.name(id) != p.name || store.get(id).shape() != p.shape.as_slice() {
                return Err(Error::invalid(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    p.name,
                    p.shape,
                    store.name(id),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = Tensor::from_f64(&p.shape, &p.data)?;
        }
        Ok(model)
    }
}

pub fn save_checkpoint<F: Scalar>(model: &Transformer<F>, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_model(model))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Transformer<F>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    ckpt.into_model()
}
