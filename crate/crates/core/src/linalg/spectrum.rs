//! Spectrum truncation and filtering in the eigenbasis.

use std::sync::Arc;

use super::matrix::{gemm, MatRef};
use super::{DenseMatrix, EigenSystem, LinalgError};

/// Anything that carries eigenvalues and the matching eigenvector columns.
pub trait Spectrum {
    /// Retained eigenvalues (length q).
    fn eigenvalues(&self) -> &[f64];
    /// Eigenvectors as an `n × q` matrix.
    fn eigenvectors(&self) -> &DenseMatrix;
    /// Cheap shared handle to the eigenvectors.
    fn shared_eigenvectors(&self) -> Arc<DenseMatrix>;

    fn num_nodes(&self) -> usize {
        self.eigenvectors().rows()
    }

    fn num_retained(&self) -> usize {
        self.eigenvalues().len()
    }
}

impl Spectrum for EigenSystem {
    fn eigenvalues(&self) -> &[f64] {
        EigenSystem::eigenvalues(self)
    }

    fn eigenvectors(&self) -> &DenseMatrix {
        EigenSystem::eigenvectors(self)
    }

    fn shared_eigenvectors(&self) -> Arc<DenseMatrix> {
        EigenSystem::shared_eigenvectors(self)
    }
}

/// Which ends of the spectrum were retained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub num_smallest: usize,
    pub num_largest: usize,
}

/// The `num_smallest` lowest and `num_largest` highest eigenpairs of a parent system.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedEigenSystem {
    eigenvalues: Vec<f64>,
    eigenvectors: Arc<DenseMatrix>,
    selection: Selection,
}

impl TruncatedEigenSystem {
    pub fn selection(&self) -> Selection {
        self.selection
    }
}

impl Spectrum for TruncatedEigenSystem {
    fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    fn eigenvectors(&self) -> &DenseMatrix {
        &self.eigenvectors
    }

    fn shared_eigenvectors(&self) -> Arc<DenseMatrix> {
        Arc::clone(&self.eigenvectors)
    }
}

/// Keeps the smallest `num_smallest` and largest `num_largest` eigenpairs,
/// smallest block first, both ascending.
pub fn truncate_spectrum(
    e: &EigenSystem,
    num_smallest: usize,
    num_largest: usize,
) -> Result<TruncatedEigenSystem, LinalgError> {
    let n = e.len();
    if num_smallest + num_largest > n {
        return Err(LinalgError::OverSelection {
            requested: num_smallest + num_largest,
            available: n,
        });
    }
    let cols: Vec<usize> = (0..num_smallest).chain(n - num_largest..n).collect();
    let eigenvalues = cols.iter().map(|&j| e.eigenvalues()[j]).collect();
    let eigenvectors = if cols.len() == n {
        e.shared_eigenvectors()
    } else {
        Arc::new(e.eigenvectors().select_columns(&cols))
    };
    Ok(TruncatedEigenSystem {
        eigenvalues,
        eigenvectors,
        selection: Selection {
            num_smallest,
            num_largest,
        },
    })
}

/// `U diag(new_eigenvalues) Uᵀ x`, evaluated right to left so the `n × n`
/// operator is never formed.
pub fn spectral_apply<S: Spectrum + ?Sized>(
    spectrum: &S,
    new_eigenvalues: &[f64],
    x: &DenseMatrix,
) -> Result<DenseMatrix, LinalgError> {
    let u = spectrum.eigenvectors();
    let (n, q) = u.shape();
    if new_eigenvalues.len() != q {
        return Err(LinalgError::ShapeMismatch {
            op: "spectral_apply (filter length)",
            left: (new_eigenvalues.len(), 1),
            right: (q, 1),
        });
    }
    if x.rows() != n {
        return Err(LinalgError::ShapeMismatch {
            op: "spectral_apply (signal rows)",
            left: u.shape(),
            right: x.shape(),
        });
    }
    let cols = x.cols();
    let mut coeffs = DenseMatrix::zeros(q, cols);
    gemm(
        q,
        n,
        cols,
        1.0,
        MatRef::transposed(u),
        MatRef::normal(x),
        0.0,
        &mut coeffs,
    );
    for (k, &g) in new_eigenvalues.iter().enumerate() {
        for v in coeffs.row_mut(k) {
            *v *= g;
        }
    }
    let mut out = DenseMatrix::zeros(n, cols);
    gemm(
        n,
        q,
        cols,
        1.0,
        MatRef::normal(u),
        MatRef::normal(&coeffs),
        0.0,
        &mut out,
    );
    Ok(out)
}
