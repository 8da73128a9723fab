use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ContextReasoning, CrParams, QueryMode, PARAM_NAMES};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "hopose-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One tensor: its shape and row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let values = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| (r, c))).map(|(r, c)| m[(r, c)]).collect();
        Self { shape: vec![m.nrows(), m.ncols()], values }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let [rows, cols] = self.shape[..] else {
            return Err(Error::dims(format!("tensor rank {} is not 2", self.shape.len())));
        };
        if rows * cols != self.values.len() {
            return Err(Error::dims(format!("tensor {rows}x{cols} holds {} values", self.values.len())));
        }
        Ok(DMatrix::from_row_slice(rows, cols, &self.values))
    }
}

/// Flat named-tensor document. Names are `hand.<param>` and
/// `object.<param>` for the two attention blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub mode: QueryMode,
    pub tensors: BTreeMap<String, NamedTensor>,
}

impl Checkpoint {
    pub fn from_module(module: &ContextReasoning) -> Self {
        let mut tensors = BTreeMap::new();
        for (prefix, block) in [("hand", module.hand_block()), ("object", module.object_block())] {
            if let Some(block) = block {
                for (name, m) in block.tensors() {
                    tensors.insert(format!("{prefix}.{name}"), NamedTensor::from_matrix(m));
                }
            }
        }
        Self { format: CHECKPOINT_FORMAT.to_string(), version: CHECKPOINT_VERSION, mode: module.mode(), tensors }
    }

    pub fn to_module(&self) -> Result<ContextReasoning> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        let load = |prefix: &str| -> Result<CrParams> {
            let get = |name: &str| -> Result<DMatrix<f64>> {
                let key = format!("{prefix}.{name}");
                self.tensors.get(&key).ok_or_else(|| Error::invalid(format!("checkpoint lacks tensor {key}")))?.to_matrix()
            };
            let mut params = CrParams::identity(1, 1);
            for (name, slot) in params.tensors_mut() {
                *slot = get(name)?;
            }
            params.validate()?;
            Ok(params)
        };
        let expected: usize = [self.mode.enhances_hand(), self.mode.enhances_object()].iter().filter(|&&b| b).count();
        if self.tensors.len() != expected * PARAM_NAMES.len() {
            return Err(Error::invalid(format!(
                "checkpoint for mode {} should hold {} tensors, found {}",
                self.mode.label(),
                expected * PARAM_NAMES.len(),
                self.tensors.len()
            )));
        }
        let hand = self.mode.enhances_hand().then(|| load("hand")).transpose()?;
        let object = self.mode.enhances_object().then(|| load("object")).transpose()?;
        ContextReasoning::new(self.mode, hand, object)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("checkpoint json: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }
}
