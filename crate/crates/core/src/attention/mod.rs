//! Hand-object contextual reasoning: a single-head cross-attention block
//! followed by a residual feed-forward stage, with hand-written backward
//! passes, plus the heatmap decoding and training losses of the two pose
//! decoders.
//!
//! Feature maps are `H x W x C` and are treated as `H * W` tokens of width
//! `C`. Every linear map acts on the right of a row of tokens, so
//! `Q = X_query * W_q` with `W_q` of shape `C x C`.

mod block;
mod checkpoint;
mod gradcheck;
mod heatmap;
mod losses;
mod module;

pub use block::{cr_backward, cr_forward, softmax_rows, CrGradients, CrParams, GradTape, LN_EPSILON, PARAM_NAMES};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{gradcheck, relative_error, GradCheckReport, GRADCHECK_REL_FLOOR, GRADCHECK_STEP};
pub use heatmap::{gaussian_heatmaps, heatmap_loss, soft_argmax_joints, HEATMAP_NORM_TOL};
pub use losses::{hand_loss, mano_loss, masked_total_loss, object_loss, ManoTerms, CONF_WEIGHT, HEATMAP_WEIGHT, P2D_WEIGHT};
pub use module::{ContextReasoning, CrOutput, CrTape, ModuleGradients, QueryMode};

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Dense `H x W x C` tensor stored row-major (channel fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::dims(format!("feature map {height}x{width}x{channels} has an empty axis")));
        }
        if data.len() != height * width * channels {
            return Err(Error::dims(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map contains non-finite values"));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Token matrix, one row per spatial position.
    pub fn to_tokens(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.positions(), self.channels, &self.data)
    }

    pub fn from_tokens(height: usize, width: usize, tokens: &DMatrix<f64>) -> Self {
        let channels = tokens.ncols();
        let mut data = Vec::with_capacity(tokens.len());
        for r in 0..tokens.nrows() {
            data.extend(tokens.row(r).iter());
        }
        Self { height, width, channels, data }
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &FeatureMap) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}
