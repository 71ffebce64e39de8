use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("riccati iteration did not converge after {iterations} iterations (last change {change:e})")]
    DareNotConverged { iterations: usize, change: f64 },
    #[error("need at least {required} samples for alpha = {alpha} (got {available})")]
    InsufficientSamples {
        required: usize,
        available: usize,
        alpha: f64,
    },
    #[error("unknown example id `{0}`")]
    UnknownExample(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("gamma table was computed for a different system or constraint set")]
    TableMismatch,
}
