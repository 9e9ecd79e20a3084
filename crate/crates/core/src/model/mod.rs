//! Eigenvalue encoding, the Transformer over the spectrum, the filter decoder
//! and the learnable-basis graph convolution.

mod config;
mod edge;
mod encoding;
mod net;
mod params;

pub use config::{Activation, Combination, Decoder, ModelConfig, Variant};
pub use edge::{edge_feature_layer, Tensor3};
pub use encoding::{eigenvalue_encoding, fit_univariate_filter, FilterFit, FIT_RANK_TOLERANCE};
pub use net::{FilterBank, ForwardOutput, Session, SpectralInput};
pub use params::ModelParams;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::linalg::LinalgError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}
