use super::ModelError;
use crate::linalg::DenseMatrix;

/// Dense `n0 × n1 × n2` array, last index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n0: usize, n1: usize, n2: usize) -> Self {
        Self {
            dims: (n0, n1, n2),
            data: vec![0.0; n0 * n1 * n2],
        }
    }

    pub fn from_fn(n0: usize, n1: usize, n2: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(n0, n1, n2);
        for i in 0..n0 {
            for j in 0..n1 {
                for k in 0..n2 {
                    t.data[(i * n1 + j) * n2 + k] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Repeats an `n0 × n1` matrix along a new trailing axis of length `n2`.
    pub fn broadcast_channels(m: &DenseMatrix, n2: usize) -> Self {
        Self::from_fn(m.rows(), m.cols(), n2, |i, j, _| m[(i, j)])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dims.1 + j) * self.dims.2 + k]
    }
}

/// Edge-aware layer: `E ← H ⊕ E` (node features broadcast along the first
/// axis), `Ê = S ⊙ E`, `Ĥ = Σ_k Ê[k, :, :]`.
pub fn edge_feature_layer(h: &DenseMatrix, e: &Tensor3, s: &Tensor3) -> Result<DenseMatrix, ModelError> {
    let (n, d) = h.shape();
    if e.dims() != (n, n, d) || s.dims() != (n, n, d) {
        return Err(ModelError::Shape(format!(
            "edge layer: H {n}x{d}, E {:?}, S {:?}",
            e.dims(),
            s.dims()
        )));
    }
    let mut out = DenseMatrix::zeros(n, d);
    for k in 0..n {
        for j in 0..n {
            let row = out.row_mut(j);
            let hj = h.row(j);
            for c in 0..d {
                row[c] += s.get(k, j, c) * (hj[c] + e.get(k, j, c));
            }
        }
    }
    Ok(out)
}
