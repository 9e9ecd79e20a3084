//! Symmetric eigendecomposition.
//!
//! Householder reduction to tridiagonal form followed by implicit QL
//! iterations with Wilkinson shifts (the EISPACK `tred2`/`tql2` pair).
//! The working eigenvector matrix is kept transposed so every inner loop
//! walks contiguous memory.

use std::sync::Arc;

use super::{DenseMatrix, LinalgError};

/// Symmetry tolerance accepted on input; the solver symmetrizes anyway.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Components with magnitude at or below this are skipped when fixing the sign gauge.
pub const GAUGE_THRESHOLD: f64 = 1e-12;

/// Eigenvalues (ascending) and the matching orthonormal eigenvectors (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    eigenvectors: Arc<DenseMatrix>,
}

impl EigenSystem {
    /// Assembles a system from parts. Used by callers that rotate or relabel a
    /// solved system; no invariant beyond matching sizes is checked.
    pub fn from_parts(eigenvalues: Vec<f64>, eigenvectors: DenseMatrix) -> Result<Self, LinalgError> {
        if eigenvectors.cols() != eigenvalues.len() || eigenvectors.rows() != eigenvalues.len() {
            return Err(LinalgError::ShapeMismatch {
                op: "eigensystem",
                left: (eigenvalues.len(), 1),
                right: eigenvectors.shape(),
            });
        }
        Ok(Self {
            eigenvalues,
            eigenvectors: Arc::new(eigenvectors),
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DenseMatrix {
        &self.eigenvectors
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub(crate) fn shared_eigenvectors(&self) -> Arc<DenseMatrix> {
        Arc::clone(&self.eigenvectors)
    }

    /// `‖UᵀU − I‖_max`.
    pub fn orthonormality_residual(&self) -> f64 {
        let u = self.eigenvectors();
        let gram = u.transpose().matmul(u).expect("square");
        gram.max_abs_diff(&DenseMatrix::identity(u.cols()))
    }

    /// `‖U diag(Λ) Uᵀ − m‖_max`.
    pub fn reconstruction_residual(&self, m: &DenseMatrix) -> f64 {
        let u = self.eigenvectors();
        let scaled = DenseMatrix::from_fn(u.rows(), u.cols(), |i, j| u[(i, j)] * self.eigenvalues[j]);
        let rebuilt = scaled.matmul(&u.transpose()).expect("square");
        rebuilt.max_abs_diff(m)
    }
}

/// Solves the symmetric eigenproblem for `m`.
///
/// The input is symmetrized as `(M + Mᵀ)/2` first. Eigenvalues come back
/// ascending; in each eigenvector the first component with magnitude above
/// [`GAUGE_THRESHOLD`] is non-negative.
pub fn symmetric_eig(m: &DenseMatrix) -> Result<EigenSystem, LinalgError> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols });
    }
    let n = rows;
    if n == 0 {
        return Ok(EigenSystem {
            eigenvalues: Vec::new(),
            eigenvectors: Arc::new(DenseMatrix::zeros(0, 0)),
        });
    }
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOLERANCE * m.max_abs().max(1.0) {
        return Err(LinalgError::NotSymmetric { deviation: asym });
    }

    // `w` holds Vᵀ: row c of `w` is column c of V.
    let mut w = m.symmetrized().into_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut w, &mut d, &mut e);
    ql_implicit(n, &mut w, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));

    let eigenvalues: Vec<f64> = order.iter().map(|&k| d[k]).collect();
    let mut u = DenseMatrix::zeros(n, n);
    for (j, &k) in order.iter().enumerate() {
        let v = &w[k * n..(k + 1) * n];
        let flip = v.iter().find(|x| x.abs() > GAUGE_THRESHOLD).is_some_and(|&x| x < 0.0);
        let sign = if flip { -1.0 } else { 1.0 };
        for (i, &x) in v.iter().enumerate() {
            u[(i, j)] = sign * x;
        }
    }
    Ok(EigenSystem {
        eigenvalues,
        eigenvectors: Arc::new(u),
    })
}

#[inline]
fn at(n: usize, row: usize, col: usize) -> usize {
    // V[row][col] lives at w[col * n + row]
    col * n + row
}

/// Householder tridiagonalization; on return `d` is the diagonal, `e[1..]`
/// the subdiagonal and `w` the accumulated orthogonal transform (transposed).
fn tridiagonalize(n: usize, w: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    for j in 0..n {
        d[j] = w[at(n, n - 1, j)];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = w[at(n, i - 1, j)];
                w[at(n, i, j)] = 0.0;
                w[at(n, j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }

            for j in 0..i {
                let f = d[j];
                w[at(n, j, i)] = f;
                let col = &w[j * n..j * n + i];
                let mut g = e[j] + col[j] * f;
                for k in (j + 1)..i {
                    g += col[k] * d[k];
                    e[k] += col[k] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                let col = &mut w[j * n..j * n + i];
                for k in j..i {
                    col[k] -= f * e[k] + g * d[k];
                }
                d[j] = w[at(n, i - 1, j)];
                w[at(n, i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    // Accumulate transformations.
    for i in 0..n - 1 {
        w[at(n, n - 1, i)] = w[at(n, i, i)];
        w[at(n, i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = w[at(n, k, i + 1)] / h;
            }
            for j in 0..=i {
                let (lo, hi) = w.split_at_mut((i + 1) * n);
                let next = &hi[..=i];
                let col = &mut lo[j * n..j * n + i + 1];
                let mut g = 0.0;
                for k in 0..=i {
                    g += next[k] * col[k];
                }
                for k in 0..=i {
                    col[k] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            w[at(n, k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = w[at(n, n - 1, j)];
        w[at(n, n - 1, j)] = 0.0;
    }
    w[at(n, n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal (`d`, `e`), rotating the columns of V.
fn ql_implicit(n: usize, w: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<(), LinalgError> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let max_iterations = 64 * n;
    let mut iterations = 0usize;
    let mut f = 0.0;
    let mut tst1 = 0.0_f64;
    let eps = f64::EPSILON;

    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }

        if m > l {
            loop {
                iterations += 1;
                if iterations > max_iterations {
                    return Err(LinalgError::NoConvergence {
                        index: l,
                        iterations: max_iterations,
                    });
                }

                // Shift from the leading 2x2 block.
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (lo, hi) = w.split_at_mut((i + 1) * n);
                    let vi = &mut lo[i * n..];
                    let vi1 = &mut hi[..n];
                    for k in 0..n {
                        let hk = vi1[k];
                        vi1[k] = s * vi[k] + c * hk;
                        vi[k] = c * vi[k] - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;

                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_analytic() {
        let m = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let sys = symmetric_eig(&m).unwrap();
        assert!((sys.eigenvalues()[0] - 0.0).abs() < 1e-14);
        assert!((sys.eigenvalues()[1] - 2.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let u = sys.eigenvectors();
        assert!((u[(0, 0)] - r).abs() < 1e-14 && (u[(1, 0)] - r).abs() < 1e-14);
        assert!((u[(0, 1)] - r).abs() < 1e-14 && (u[(1, 1)] + r).abs() < 1e-14);
    }

    #[test]
    fn diagonal_input() {
        let sys = symmetric_eig(&DenseMatrix::from_diagonal(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(sys.eigenvalues(), &[1.0, 2.0, 3.0]);
        let u = sys.eigenvectors();
        // column j is the unit vector of the original diagonal position
        for (j, &pos) in [1usize, 2, 0].iter().enumerate() {
            for i in 0..3 {
                let want = if i == pos { 1.0 } else { 0.0 };
                assert_eq!(u[(i, j)], want);
            }
        }
    }

    #[test]
    fn one_by_one_and_empty() {
        let sys = symmetric_eig(&DenseMatrix::from_rows(&[vec![-4.5]]).unwrap()).unwrap();
        assert_eq!(sys.eigenvalues(), &[-4.5]);
        assert_eq!(sys.eigenvectors()[(0, 0)], 1.0);
        assert!(symmetric_eig(&DenseMatrix::zeros(0, 0)).unwrap().is_empty());
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        assert!(matches!(
            symmetric_eig(&DenseMatrix::zeros(2, 3)),
            Err(LinalgError::NotSquare { .. })
        ));
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(symmetric_eig(&m), Err(LinalgError::NotSymmetric { .. })));
    }

    #[test]
    fn random_symmetric_residuals_and_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2usize, 3, 7, 20, 41] {
            let a = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).symmetrized();
            let sys = symmetric_eig(&a).unwrap();
            assert!(sys.orthonormality_residual() < 1e-12, "n={n}");
            assert!(sys.reconstruction_residual(&a) < 1e-12, "n={n}");
            assert!(sys.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
            assert!((sys.eigenvalues().iter().sum::<f64>() - a.trace()).abs() < 1e-10);
            let u = sys.eigenvectors();
            for j in 0..n {
                let first = (0..n).map(|i| u[(i, j)]).find(|x| x.abs() > GAUGE_THRESHOLD).unwrap();
                assert!(first > 0.0);
            }
        }
    }

    #[test]
    fn repeated_eigenvalues() {
        // I + rank-one: eigenvalues 1 (multiplicity n-1) and 1 + n
        let n = 6;
        let a = DenseMatrix::from_fn(n, n, |i, j| if i == j { 2.0 } else { 1.0 });
        let sys = symmetric_eig(&a).unwrap();
        for k in 0..n - 1 {
            assert!((sys.eigenvalues()[k] - 1.0).abs() < 1e-12);
        }
        assert!((sys.eigenvalues()[n - 1] - (n as f64 + 1.0)).abs() < 1e-12);
        assert!(sys.reconstruction_residual(&a) < 1e-12);
    }

    #[test]
    fn bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DenseMatrix::from_fn(30, 30, |_, _| rng.gen_range(-1.0..1.0)).symmetrized();
        assert_eq!(symmetric_eig(&a).unwrap(), symmetric_eig(&a).unwrap());
    }
}
