//! Dense least squares via Householder QR.

use super::dd::Dd;
use super::{DenseMatrix, LinalgError};

/// Outcome of a least-squares solve.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub solution: Vec<f64>,
    /// Whether the ridge-regularized system had to be used.
    pub regularized: bool,
}

/// Relative pivot size below which the design matrix is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Minimizes `‖A w − b‖₂`.
///
/// A full-rank `A` is solved directly by QR. When a pivot of `R` falls
/// below [`RANK_TOLERANCE`] relative to the largest, the problem is re-solved
/// with ridge penalty `ridge · ‖w‖²`, which is the regularized normal system
/// `(AᵀA + ridge·I) w = Aᵀb`, factorized through the stacked matrix
/// `[A; √ridge·I]` instead of forming `AᵀA`.
pub fn least_squares(a: &DenseMatrix, b: &[f64], ridge: f64) -> Result<LeastSquares, LinalgError> {
    if a.rows() != b.len() {
        return Err(LinalgError::ShapeMismatch {
            op: "least_squares",
            left: a.shape(),
            right: (b.len(), 1),
        });
    }
    if a.rows() >= a.cols() {
        if let Some(solution) = qr_solve(a, b)? {
            return Ok(LeastSquares {
                solution,
                regularized: false,
            });
        }
    }
    let (m, k) = a.shape();
    let s = ridge.sqrt();
    let stacked = DenseMatrix::from_fn(m + k, k, |i, j| {
        if i < m {
            a[(i, j)]
        } else if i - m == j {
            s
        } else {
            0.0
        }
    });
    let mut rhs = b.to_vec();
    rhs.resize(m + k, 0.0);
    let solution = qr_solve(&stacked, &rhs)?.ok_or(LinalgError::Singular)?;
    Ok(LeastSquares {
        solution,
        regularized: true,
    })
}

/// Householder QR solve; `None` when `R` is numerically singular.
fn qr_solve(a: &DenseMatrix, b: &[f64]) -> Result<Option<Vec<f64>>, LinalgError> {
    let k = a.cols();
    // Column-major copy so each Householder step works on contiguous columns.
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| a.column_vec(j)).collect();
    let mut rhs = b.to_vec();
    let mut diag = vec![0.0; k];

    for j in 0..k {
        let norm = cols[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[j] = 0.0;
            continue;
        }
        let alpha = if cols[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = cols[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        diag[j] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        for col in cols.iter_mut().skip(j + 1) {
            let dot: f64 = v.iter().zip(&col[j..]).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col[j..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        let dot: f64 = v.iter().zip(&rhs[j..]).map(|(a, b)| a * b).sum();
        let f = 2.0 * dot / vnorm2;
        for (r, vi) in rhs[j..].iter_mut().zip(&v) {
            *r -= f * vi;
        }
    }

    let max_diag = diag.iter().fold(0.0_f64, |acc, d| acc.max(d.abs()));
    if max_diag == 0.0 || diag.iter().any(|d| d.abs() <= RANK_TOLERANCE * max_diag) {
        return Ok(None);
    }
    let mut w = vec![0.0; k];
    for j in (0..k).rev() {
        let mut s = rhs[j];
        for (i, wi) in w.iter().enumerate().skip(j + 1) {
            s -= cols[i][j] * wi;
        }
        w[j] = s / diag[j];
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::Singular);
    }
    Ok(Some(w))
}

/// Outcome of [`least_squares_extended`].
#[derive(Clone, Debug)]
pub struct PivotedLeastSquares {
    /// Minimizer rounded to `f64`; columns outside the retained set get zero.
    pub solution: Vec<f64>,
    /// `b − A w`, evaluated before the solution is rounded.
    pub residual: Vec<f64>,
    /// Number of columns retained by pivoting.
    pub rank: usize,
}

/// Minimizes `‖A w − b‖₂` with column-pivoted Householder QR in double-double
/// arithmetic. Pivoting stops once the largest remaining column norm falls
/// below `rank_tolerance` times the first pivot, giving a basic solution on
/// the retained columns.
pub fn least_squares_extended(
    a: &DenseMatrix,
    b: &[f64],
    rank_tolerance: f64,
) -> Result<PivotedLeastSquares, LinalgError> {
    if a.rows() != b.len() {
        return Err(LinalgError::ShapeMismatch {
            op: "least_squares_extended",
            left: a.shape(),
            right: (b.len(), 1),
        });
    }
    let cols = (0..a.cols())
        .map(|j| a.column_vec(j).into_iter().map(Dd::from).collect())
        .collect();
    pivoted_least_squares(cols, b, rank_tolerance)
}

/// Pivoted QR solve on double-double columns of equal length `b.len()`.
pub(crate) fn pivoted_least_squares(
    columns: Vec<Vec<Dd>>,
    b: &[f64],
    rank_tolerance: f64,
) -> Result<PivotedLeastSquares, LinalgError> {
    let (m, n) = (b.len(), columns.len());
    if let Some(bad) = columns.iter().find(|c| c.len() != m) {
        return Err(LinalgError::ShapeMismatch {
            op: "least_squares_extended",
            left: (bad.len(), n),
            right: (m, 1),
        });
    }
    let mut cols = columns.clone();
    let mut rhs: Vec<Dd> = b.iter().copied().map(Dd::from).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut diag = Vec::new();
    let norm2 = |v: &[Dd]| v.iter().fold(Dd::ZERO, |acc, &x| acc + x * x);
    let dot = |u: &[Dd], v: &[Dd]| u.iter().zip(v).fold(Dd::ZERO, |acc, (&x, &y)| acc + x * y);

    let mut first = 0.0;
    for k in 0..n.min(m) {
        let (best, best_norm) = (k..n)
            .map(|j| (j, norm2(&cols[j][k..]).sqrt()))
            .fold((k, Dd::ZERO), |acc, c| if c.1.hi > acc.1.hi { c } else { acc });
        if k == 0 {
            first = best_norm.hi;
        }
        if best_norm.hi == 0.0 || best_norm.hi <= rank_tolerance * first {
            break;
        }
        cols.swap(k, best);
        perm.swap(k, best);
        let alpha = if cols[k][k].hi > 0.0 { -best_norm } else { best_norm };
        let mut v = cols[k][k..].to_vec();
        v[0] = v[0] - alpha;
        let vv = norm2(&v);
        for col in cols.iter_mut().skip(k + 1) {
            let f = Dd::from(2.0) * dot(&v, &col[k..]) / vv;
            for (c, &vi) in col[k..].iter_mut().zip(&v) {
                *c = *c - f * vi;
            }
        }
        let f = Dd::from(2.0) * dot(&v, &rhs[k..]) / vv;
        for (r, &vi) in rhs[k..].iter_mut().zip(&v) {
            *r = *r - f * vi;
        }
        diag.push(alpha);
    }

    let rank = diag.len();
    let mut z = vec![Dd::ZERO; rank];
    for j in (0..rank).rev() {
        let mut s = rhs[j];
        for (i, &zi) in z.iter().enumerate().skip(j + 1) {
            s = s - cols[i][j] * zi;
        }
        z[j] = s / diag[j];
    }
    let mut w = vec![Dd::ZERO; n];
    for (j, &zj) in z.iter().enumerate() {
        w[perm[j]] = zj;
    }
    let residual: Vec<f64> = (0..m)
        .map(|i| {
            let fit = columns.iter().zip(&w).fold(Dd::ZERO, |acc, (c, &wj)| acc + c[i] * wj);
            (Dd::from(b[i]) - fit).to_f64()
        })
        .collect();
    let solution: Vec<f64> = w.iter().map(|x| x.to_f64()).collect();
    if solution.iter().chain(&residual).any(|v| !v.is_finite()) {
        return Err(LinalgError::Singular);
    }
    Ok(PivotedLeastSquares {
        solution,
        residual,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_fit() {
        let a = DenseMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let b: Vec<f64> = (0..5).map(|i| 2.0 + 3.0 * i as f64).collect();
        let ls = least_squares(&a, &b, 1e-10).unwrap();
        assert!(!ls.regularized);
        assert!((ls.solution[0] - 2.0).abs() < 1e-12 && (ls.solution[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn overdetermined_matches_normal_equations() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let b = [1.0, 0.0, 2.0];
        // normal equations: [[3,3],[3,5]] w = [3,4] → w = (0.5, 0.5)
        let ls = least_squares(&a, &b, 1e-10).unwrap();
        assert!((ls.solution[0] - 0.5).abs() < 1e-12 && (ls.solution[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn duplicate_columns_fall_back_to_ridge() {
        let a = DenseMatrix::from_fn(4, 2, |i, _| i as f64 + 1.0);
        let b = [1.0, 2.0, 3.0, 4.0];
        let ls = least_squares(&a, &b, 1e-10).unwrap();
        assert!(ls.regularized);
        // ridge splits the weight evenly between identical columns
        assert!((ls.solution[0] - 0.5).abs() < 1e-6 && (ls.solution[1] - 0.5).abs() < 1e-6);
    }
}
