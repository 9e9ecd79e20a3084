//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] evaluates every op eagerly and records what its gradient rule
//! needs. [`Tape::backward`] then sweeps the nodes once in reverse order.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{gradient_check, relative_error, GradCheckEntry, GradCheckReport, GRADCHECK_TOLERANCE};
pub use params::{ParamSet, ParamVars};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape {
        op: &'static str,
        shapes: Vec<(usize, usize)>,
    },
    #[error("backward needs a 1x1 loss, got {}x{}", shape.0, shape.1)]
    NotScalar { shape: (usize, usize) },
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("mask selects no rows")]
    EmptyMask,
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("unknown parameter `{0}`")]
    MissingParam(String),
    #[error("{0}")]
    InvalidArgument(String),
}
