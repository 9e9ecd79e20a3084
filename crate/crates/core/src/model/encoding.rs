use super::ModelError;
use crate::linalg::dd::Dd;
use crate::linalg::lstsq::pivoted_least_squares;
use crate::linalg::DenseMatrix;

/// Rows `[λ, sin(ελ/10000^{0/d}), cos(ελ/10000^{0/d}), sin(ελ/10000^{2/d}), …]`,
/// one per eigenvalue; `q × (d+1)`.
pub fn eigenvalue_encoding(lambdas: &[f64], d: usize, epsilon: f64) -> Result<DenseMatrix, ModelError> {
    if d % 2 != 0 {
        return Err(ModelError::Config(format!("encoding width must be even, got {d}")));
    }
    let freqs: Vec<f64> = (0..d / 2)
        .map(|i| epsilon / 10000f64.powf(2.0 * i as f64 / d as f64))
        .collect();
    Ok(DenseMatrix::from_fn(lambdas.len(), d + 1, |j, c| {
        let lambda = lambdas[j];
        if c == 0 {
            return lambda;
        }
        let k = c - 1;
        let (s, co) = (freqs[k / 2] * lambda).sin_cos();
        if k % 2 == 0 {
            s
        } else {
            co
        }
    }))
}

/// Relative pivot size at which the encoding fit stops adding columns.
pub const FIT_RANK_TOLERANCE: f64 = 1e-28;

/// Linear fit of a scalar response by the encoding basis.
#[derive(Clone, Debug)]
pub struct FilterFit {
    /// Weights for `[λ, ρ_0, …, ρ_{d−1}]`, rounded to `f64`.
    pub weights: Vec<f64>,
    /// Largest absolute residual over the grid, evaluated in double-double.
    pub max_error: f64,
    /// Encoding columns retained by the pivoted solve.
    pub rank: usize,
}

/// Encoding columns in double-double precision, treating `grid` and
/// `epsilon` as exact.
fn encoding_columns(grid: &[f64], d: usize, epsilon: f64) -> Vec<Vec<Dd>> {
    let mut cols = vec![grid.iter().copied().map(Dd::from).collect::<Vec<_>>()];
    if d == 0 {
        return cols;
    }
    let ratio = Dd::from(10000.0).root(d as u32 / 2);
    for i in 0..d / 2 {
        let freq = Dd::from(epsilon) / ratio.powi(i as u32);
        let (s, c): (Vec<Dd>, Vec<Dd>) = grid.iter().map(|&l| (freq * Dd::from(l)).sin_cos()).unzip();
        cols.push(s);
        cols.push(c);
    }
    cols
}

/// Least-squares fit of `ρ(λ)·w ≈ g(λ)` over `grid`.
///
/// The basis is nearly dependent for large `d`, so the fit runs in
/// double-double with column pivoting.
pub fn fit_univariate_filter(
    target: impl Fn(f64) -> f64,
    grid: &[f64],
    d: usize,
    epsilon: f64,
) -> Result<FilterFit, ModelError> {
    if d % 2 != 0 {
        return Err(ModelError::Config(format!("encoding width must be even, got {d}")));
    }
    if let Some(bad) = grid.iter().find(|l| !(0.0..=2.0).contains(*l)) {
        return Err(ModelError::Config(format!("grid point {bad} outside [0, 2]")));
    }
    let b: Vec<f64> = grid.iter().map(|&l| target(l)).collect();
    let ls = pivoted_least_squares(encoding_columns(grid, d, epsilon), &b, FIT_RANK_TOLERANCE)?;
    Ok(FilterFit {
        weights: ls.solution,
        max_error: ls.residual.iter().fold(0.0, |m, r| m.max(r.abs())),
        rank: ls.rank,
    })
}
