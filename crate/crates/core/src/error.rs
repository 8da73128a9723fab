use crate::geometry::Pose6Dof;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Input geometry does not determine a unique answer (zero spread,
    /// coplanar PnP points, zero-length bones, ...).
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    /// An iterative solver hit its iteration cap. Carries the best estimate.
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { pose: Box<Pose6Dof>, residual: f64, iterations: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("heatmap channel {channel} is not a distribution (sum {sum}, min {min})")]
    NotNormalized { channel: usize, sum: f64, min: f64 },
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateConfiguration(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
