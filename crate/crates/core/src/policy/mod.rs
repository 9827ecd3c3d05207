//! A tabular softmax sequence policy with exact log-probabilities and
//! analytic gradients, the decoding filters used to sample from it, and a
//! modular-arithmetic task family small enough to learn exactly.

mod decode;
mod tabular;
mod toy;
mod vocab;

pub use decode::*;
pub use tabular::*;
pub use toy::*;
pub use vocab::*;

use thiserror::Error;

use crate::params::ParamError;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("index: {0}")]
    Index(String),
    #[error("generation config: {0}")]
    Config(String),
    #[error("toy task: {0}")]
    Task(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}
