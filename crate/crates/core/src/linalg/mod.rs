//! Dense linear algebra: matrices, symmetric eigendecomposition, spectrum
//! truncation and spectral filtering.

pub(crate) mod dd;
mod eigen;
pub(crate) mod lstsq;
mod matrix;
mod spectrum;

pub use eigen::{symmetric_eig, EigenSystem, GAUGE_THRESHOLD, SYMMETRY_TOLERANCE};
pub use lstsq::{least_squares, least_squares_extended, LeastSquares, PivotedLeastSquares, RANK_TOLERANCE};
pub use matrix::{gemm, matmul, DenseMatrix, MatRef};
pub use spectrum::{spectral_apply, truncate_spectrum, Selection, Spectrum, TruncatedEigenSystem};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("{op}: incompatible shapes {}x{} and {}x{}", left.0, left.1, right.0, right.1)]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected {rows}x{cols} = {} entries, got {len}", rows * cols)]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("row {row} has {found} entries, expected {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max deviation {deviation:e})")]
    NotSymmetric { deviation: f64 },
    #[error("QL iteration did not converge within {iterations} sweeps (stuck at index {index})")]
    NoConvergence { index: usize, iterations: usize },
    #[error("requested {requested} eigenpairs but only {available} exist")]
    OverSelection { requested: usize, available: usize },
    #[error("singular least-squares system")]
    Singular,
}
