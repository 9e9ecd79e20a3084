//! The tape: eager forward evaluation plus recorded gradient rules.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use rand::Rng;

use super::AutodiffError;
use crate::linalg::{gemm, DenseMatrix, MatRef};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
///
/// The value itself lives on the tape; read it with [`Tape::value`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// Per-op state kept for the backward pass.
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    SliceCols {
        src: usize,
        start: usize,
    },
    SliceRows {
        src: usize,
        start: usize,
    },
    SoftmaxRows(usize),
    LayerNorm {
        src: usize,
        inv_std: Vec<f64>,
    },
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    MeanAll(usize),
    SumAll(usize),
    BroadcastRow(usize),
    Dropout {
        src: usize,
        mask: Vec<f64>,
    },
    Attention(Box<AttentionState>),
    SpectralFilter {
        basis: Arc<DenseMatrix>,
        lambdas: usize,
        x: usize,
        blocks: usize,
        coeffs: DenseMatrix,
    },
    BlockColSum {
        src: usize,
        blocks: usize,
    },
    BasisMlpConv(Box<BasisMlpState>),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        rows: Vec<usize>,
        probs: DenseMatrix,
    },
}

struct AttentionState {
    q: usize,
    k: usize,
    v: usize,
    scale: f64,
    /// Softmax weights before dropout.
    probs: DenseMatrix,
    /// Inverted-dropout multipliers, row-major over `probs`.
    mask: Option<Vec<f64>>,
}

struct BasisMlpState {
    basis: Arc<DenseMatrix>,
    lambdas: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    x: usize,
    blocks: usize,
    bases: Vec<DenseMatrix>,
}

struct Node {
    value: DenseMatrix,
    op: Op,
    trainable: bool,
}

/// Gradients of a scalar with respect to every node that influenced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradient of `var`, if it lies upstream of the loss (or is a trainable leaf).
    pub fn get(&self, var: Var) -> Option<&DenseMatrix> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

/// Append-only record of tensor operations.
///
/// Every op evaluates eagerly and pushes one node. Node ids are assigned in
/// creation order, so inputs always precede outputs and the backward pass is a
/// single reverse sweep.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, shapes: &[(usize, usize)]) -> AutodiffError {
    AutodiffError::Shape {
        op,
        shapes: shapes.to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, op: Op, trainable: bool) -> Var {
        let (rows, cols) = value.shape();
        self.nodes.push(Node { value, op, trainable });
        Var {
            tape: self.id,
            id: self.nodes.len() - 1,
            rows,
            cols,
        }
    }

    fn check(&self, v: Var) -> Result<usize, AutodiffError> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(AutodiffError::ForeignVar);
        }
        Ok(v.id)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that receives no gradient entry unless something flows into it.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        assert_eq!(v.tape, self.id, "var belongs to another tape");
        &self.nodes[v.id].value
    }

    /// The single entry of a `1×1` var.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar var");
        m[(0, 0)]
    }

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if a.shape() != b.shape() {
            return Err(shape_err(op, &[a.shape(), b.shape()]));
        }
        Ok((ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = self.binary_same_shape("add", a, b)?;
        let v = self.nodes[ia].value.add(&self.nodes[ib].value);
        Ok(self.push(v, Op::Add(ia, ib), false))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = self.binary_same_shape("sub", a, b)?;
        let v = self.nodes[ia].value.sub(&self.nodes[ib].value);
        Ok(self.push(v, Op::Sub(ia, ib), false))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = self.binary_same_shape("mul", a, b)?;
        let v = self.nodes[ia].value.zip_with(&self.nodes[ib].value, |x, y| x * y);
        Ok(self.push(v, Op::Mul(ia, ib), false))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.scaled(factor);
        Ok(self.push(v, Op::Scale(ia, factor), false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if a.cols != b.rows {
            return Err(shape_err("matmul", &[a.shape(), b.shape()]));
        }
        let mut out = DenseMatrix::zeros(a.rows, b.cols);
        gemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            MatRef::normal(&self.nodes[ia].value),
            MatRef::normal(&self.nodes[ib].value),
            0.0,
            &mut out,
        );
        Ok(self.push(out, Op::MatMul(ia, ib), false))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.transpose();
        Ok(self.push(v, Op::Transpose(ia), false))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or_else(|| shape_err("concat_cols", &[]))?;
        let rows = first.rows;
        let mut ids = Vec::with_capacity(parts.len());
        for p in parts {
            ids.push(self.check(*p)?);
            if p.rows != rows {
                let shapes: Vec<_> = parts.iter().map(Var::shape).collect();
                return Err(shape_err("concat_cols", &shapes));
            }
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = DenseMatrix::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for &id in &ids {
                let src = self.nodes[id].value.row(i);
                out.row_mut(i)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(ids), false))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        if start + len > a.cols {
            return Err(shape_err("slice_cols", &[a.shape(), (start, len)]));
        }
        let src = &self.nodes[ia].value;
        let out = DenseMatrix::from_fn(a.rows, len, |i, j| src[(i, start + j)]);
        Ok(self.push(out, Op::SliceCols { src: ia, start }, false))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        if start + len > a.rows {
            return Err(shape_err("slice_rows", &[a.shape(), (start, len)]));
        }
        let src = &self.nodes[ia].value;
        let out = DenseMatrix::from_vec(
            len,
            a.cols,
            src.as_slice()[start * a.cols..(start + len) * a.cols].to_vec(),
        )
        .expect("slice of finite data");
        Ok(self.push(out, Op::SliceRows { src: ia, start }, false))
    }

    /// Softmax along each row, with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let mut out = self.nodes[ia].value.clone();
        for i in 0..a.rows {
            softmax_in_place(out.row_mut(i));
        }
        Ok(self.push(out, Op::SoftmaxRows(ia), false))
    }

    /// Scaled dot-product attention `softmax(q kᵀ / √width) v`.
    ///
    /// With `dropout = Some((p, rng))` the weights go through inverted
    /// dropout before multiplying `v`. The pre-dropout weights stay on the
    /// tape; see [`Tape::attention_weights`].
    pub fn attention<R: Rng + ?Sized>(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        dropout: Option<(f64, &mut R)>,
    ) -> Result<Var, AutodiffError> {
        let (iq, ik, iv) = (self.check(q)?, self.check(k)?, self.check(v)?);
        if q.cols != k.cols || k.rows != v.rows || q.cols == 0 {
            return Err(shape_err("attention", &[q.shape(), k.shape(), v.shape()]));
        }
        let scale = 1.0 / (q.cols as f64).sqrt();
        let mut probs = DenseMatrix::zeros(q.rows, k.rows);
        gemm(
            q.rows,
            q.cols,
            k.rows,
            scale,
            MatRef::normal(&self.nodes[iq].value),
            MatRef::transposed(&self.nodes[ik].value),
            0.0,
            &mut probs,
        );
        for i in 0..q.rows {
            softmax_in_place(probs.row_mut(i));
        }
        let mask = match dropout {
            Some((p, _)) if !(0.0..1.0).contains(&p) => {
                return Err(AutodiffError::InvalidArgument(format!(
                    "dropout rate {p} outside [0, 1)"
                )));
            }
            Some((p, rng)) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                Some(
                    (0..q.rows * k.rows)
                        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                        .collect::<Vec<f64>>(),
                )
            }
            _ => None,
        };
        let mut out = DenseMatrix::zeros(q.rows, v.cols);
        let vv = &self.nodes[iv].value;
        match &mask {
            Some(m) => {
                let dropped = masked(&probs, m);
                gemm(
                    q.rows,
                    k.rows,
                    v.cols,
                    1.0,
                    MatRef::normal(&dropped),
                    MatRef::normal(vv),
                    0.0,
                    &mut out,
                );
            }
            None => gemm(
                q.rows,
                k.rows,
                v.cols,
                1.0,
                MatRef::normal(&probs),
                MatRef::normal(vv),
                0.0,
                &mut out,
            ),
        }
        let state = AttentionState {
            q: iq,
            k: ik,
            v: iv,
            scale,
            probs,
            mask,
        };
        Ok(self.push(out, Op::Attention(Box::new(state)), false))
    }

    /// Pre-dropout softmax weights of a var produced by [`Tape::attention`].
    pub fn attention_weights(&self, v: Var) -> Option<&DenseMatrix> {
        if v.tape != self.id {
            return None;
        }
        match &self.nodes.get(v.id)?.op {
            Op::Attention(state) => Some(&state.probs),
            _ => None,
        }
    }

    /// Per-row standardization `(x − mean) / √(var + ε)` without affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        if a.cols == 0 {
            return Err(shape_err("layer_norm", &[a.shape()]));
        }
        let mut out = self.nodes[ia].value.clone();
        let mut inv_std = Vec::with_capacity(a.rows);
        let c = a.cols as f64;
        for i in 0..a.rows {
            let row = out.row_mut(i);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let r = 1.0 / (var + super::LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            inv_std.push(r);
        }
        Ok(self.push(out, Op::LayerNorm { src: ia, inv_std }, false))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.map(|x| x.max(0.0));
        Ok(self.push(v, Op::Relu(ia), false))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.map(f64::tanh);
        Ok(self.push(v, Op::Tanh(ia), false))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.map(f64::exp);
        if !v.is_finite() {
            return Err(AutodiffError::NonFinite { op: "exp" });
        }
        Ok(self.push(v, Op::Exp(ia), false))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let m = &self.nodes[ia].value;
        let count = (m.rows() * m.cols()).max(1) as f64;
        let v = DenseMatrix::filled(1, 1, m.as_slice().iter().sum::<f64>() / count);
        Ok(self.push(v, Op::MeanAll(ia), false))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let v = DenseMatrix::filled(1, 1, self.nodes[ia].value.as_slice().iter().sum());
        Ok(self.push(v, Op::SumAll(ia), false))
    }

    /// Repeats a `1×c` row `rows` times.
    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        if a.rows != 1 {
            return Err(shape_err("broadcast_row", &[a.shape()]));
        }
        let src = self.nodes[ia].value.row(0).to_vec();
        let mut out = DenseMatrix::zeros(rows, a.cols);
        for i in 0..rows {
            out.row_mut(i).copy_from_slice(&src);
        }
        Ok(self.push(out, Op::BroadcastRow(ia), false))
    }

    /// Adds a `1×c` bias row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        if bias.rows != 1 || bias.cols != a.cols {
            return Err(shape_err("add_row", &[a.shape(), bias.shape()]));
        }
        let b = self.broadcast_row(bias, a.rows)?;
        self.add(a, b)
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        if row.rows != 1 || row.cols != a.cols {
            return Err(shape_err("mul_row", &[a.shape(), row.shape()]));
        }
        let b = self.broadcast_row(row, a.rows)?;
        self.mul(a, b)
    }

    /// Inverted dropout: zeroes entries with probability `p` and rescales the
    /// survivors by `1/(1−p)`. Identity when `train` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, train: bool, rng: &mut R) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidArgument(format!(
                "dropout rate {p} outside [0, 1)"
            )));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let ia = self.check(a)?;
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..a.rows * a.cols)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let src = &self.nodes[ia].value;
        let data = src.as_slice().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = DenseMatrix::from_vec(a.rows, a.cols, data).expect("finite");
        Ok(self.push(out, Op::Dropout { src: ia, mask }, false))
    }

    /// Spectral filtering of stacked signals.
    ///
    /// `x` holds `blocks` signals of `n` rows each, stacked vertically. For
    /// every column `m` of `lambdas` (`q × M`) this computes
    /// `U diag(λ_m) Uᵀ x_b` per block; the result is `(blocks·n) × (M·d)` with
    /// head `m` in columns `m·d .. (m+1)·d`.
    pub fn spectral_filter(
        &mut self,
        basis: Arc<DenseMatrix>,
        lambdas: Var,
        x: Var,
        blocks: usize,
    ) -> Result<Var, AutodiffError> {
        let (il, ix) = (self.check(lambdas)?, self.check(x)?);
        let (n, q) = basis.shape();
        if lambdas.rows != q || blocks == 0 || x.rows != blocks * n {
            return Err(shape_err(
                "spectral_filter",
                &[basis.shape(), lambdas.shape(), x.shape()],
            ));
        }
        let d = x.cols;
        let heads = lambdas.cols;
        let wide = gather_blocks(&self.nodes[ix].value, blocks, n, 0, d);
        let mut coeffs = DenseMatrix::zeros(q, blocks * d);
        gemm(
            q,
            n,
            blocks * d,
            1.0,
            MatRef::transposed(&basis),
            MatRef::normal(&wide),
            0.0,
            &mut coeffs,
        );

        let lam = &self.nodes[il].value;
        let mut out = DenseMatrix::zeros(blocks * n, heads * d);
        let mut scaled = DenseMatrix::zeros(q, blocks * d);
        let mut filtered = DenseMatrix::zeros(n, blocks * d);
        for m in 0..heads {
            for k in 0..q {
                let g = lam[(k, m)];
                for (s, c) in scaled.row_mut(k).iter_mut().zip(coeffs.row(k)) {
                    *s = g * c;
                }
            }
            gemm(
                n,
                q,
                blocks * d,
                1.0,
                MatRef::normal(&basis),
                MatRef::normal(&scaled),
                0.0,
                &mut filtered,
            );
            scatter_blocks(&filtered, &mut out, blocks, n, m * d, d);
        }
        Ok(self.push(
            out,
            Op::SpectralFilter {
                basis,
                lambdas: il,
                x: ix,
                blocks,
                coeffs,
            },
            false,
        ))
    }

    /// Per-block column sums broadcast back over the block:
    /// `out[b·n + p, i] = Σ_r x[b·n + r, i]`.
    pub fn block_col_sum(&mut self, x: Var, blocks: usize) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        if blocks == 0 || x.rows % blocks != 0 {
            return Err(shape_err("block_col_sum", &[x.shape(), (blocks, 0)]));
        }
        let n = x.rows / blocks;
        let src = &self.nodes[ix].value;
        let mut out = DenseMatrix::zeros(x.rows, x.cols);
        for b in 0..blocks {
            let mut sums = vec![0.0; x.cols];
            for p in 0..n {
                for (s, v) in sums.iter_mut().zip(src.row(b * n + p)) {
                    *s += v;
                }
            }
            for p in 0..n {
                out.row_mut(b * n + p).copy_from_slice(&sums);
            }
        }
        Ok(self.push(out, Op::BlockColSum { src: ix, blocks }, false))
    }

    /// Channel-wise convolution with bases combined by a two-layer network.
    ///
    /// For every node pair `(p, r)` the channel vector
    /// `v = [δ_pr, S_1[p,r], …, S_M[p,r]]` (with `S_m = U diag(λ_m) Uᵀ`) is
    /// mapped to `s = relu(v W1 + b1) W2 + b2 ∈ R^d`, and
    /// `out[p, i] = Σ_r s_i · x[r, i]` per block. The combined basis is
    /// streamed row by row and never stored.
    #[allow(clippy::too_many_arguments)]
    pub fn basis_mlp_conv(
        &mut self,
        basis: Arc<DenseMatrix>,
        lambdas: Var,
        w1: Var,
        b1: Var,
        w2: Var,
        b2: Var,
        x: Var,
        blocks: usize,
    ) -> Result<Var, AutodiffError> {
        let ids = [
            self.check(lambdas)?,
            self.check(w1)?,
            self.check(b1)?,
            self.check(w2)?,
            self.check(b2)?,
            self.check(x)?,
        ];
        let (n, q) = basis.shape();
        let heads = lambdas.cols;
        let hidden = w1.cols;
        let d = x.cols;
        let ok = lambdas.rows == q
            && w1.rows == heads + 1
            && b1.shape() == (1, hidden)
            && w2.shape() == (hidden, d)
            && b2.shape() == (1, d)
            && blocks > 0
            && x.rows == blocks * n;
        if !ok {
            return Err(shape_err(
                "basis_mlp_conv",
                &[
                    basis.shape(),
                    lambdas.shape(),
                    w1.shape(),
                    b1.shape(),
                    w2.shape(),
                    b2.shape(),
                    x.shape(),
                ],
            ));
        }
        let lam = &self.nodes[ids[0]].value;
        let bases: Vec<DenseMatrix> = (0..heads).map(|m| filtered_basis(&basis, lam, m)).collect();
        let (w1v, b1v, w2v, b2v, xv) = (
            &self.nodes[ids[1]].value,
            &self.nodes[ids[2]].value,
            &self.nodes[ids[3]].value,
            &self.nodes[ids[4]].value,
            &self.nodes[ids[5]].value,
        );
        let mut out = DenseMatrix::zeros(x.rows, d);
        let mut pre = vec![0.0; hidden];
        let mut s = vec![0.0; d];
        for p in 0..n {
            for r in 0..n {
                mlp_entry(p, r, &bases, w1v, b1v, w2v, b2v, &mut pre, &mut s);
                for b in 0..blocks {
                    let xr = xv.row(b * n + r);
                    let o = out.row_mut(b * n + p);
                    for i in 0..d {
                        o[i] += s[i] * xr[i];
                    }
                }
            }
        }
        let state = BasisMlpState {
            basis,
            lambdas: ids[0],
            w1: ids[1],
            b1: ids[2],
            w2: ids[3],
            b2: ids[4],
            x: ids[5],
            blocks,
            bases,
        };
        Ok(self.push(out, Op::BasisMlpConv(Box::new(state)), false))
    }

    /// Mean cross-entropy over `rows` of `logits` against `labels` (indexed by row).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], rows: &[usize]) -> Result<Var, AutodiffError> {
        let il = self.check(logits)?;
        if rows.is_empty() {
            return Err(AutodiffError::EmptyMask);
        }
        if labels.len() != logits.rows {
            return Err(shape_err("cross_entropy", &[logits.shape(), (labels.len(), 1)]));
        }
        let c = logits.cols;
        let lv = &self.nodes[il].value;
        let mut probs = DenseMatrix::zeros(rows.len(), c);
        let mut total = 0.0;
        for (k, &r) in rows.iter().enumerate() {
            if r >= logits.rows {
                return Err(AutodiffError::InvalidArgument(format!("mask row {r} out of range")));
            }
            let y = labels[r];
            if y >= c {
                return Err(AutodiffError::InvalidArgument(format!("label {y} with {c} classes")));
            }
            let row = lv.row(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[y];
            for (pk, v) in probs.row_mut(k).iter_mut().zip(row) {
                *pk = (v - lse).exp();
            }
        }
        let out = DenseMatrix::filled(1, 1, total / rows.len() as f64);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits: il,
                labels: labels.to_vec(),
                rows: rows.to_vec(),
                probs,
            },
            false,
        ))
    }

    /// Reverse sweep from a `1×1` loss, seeded with 1.
    ///
    /// Trainable leaves that do not influence the loss get a zero gradient.
    /// The tape is not modified, so repeated calls give identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let il = self.check(loss)?;
        if loss.shape() != (1, 1) {
            return Err(AutodiffError::NotScalar { shape: loss.shape() });
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[il] = Some(DenseMatrix::filled(1, 1, 1.0));

        for id in (0..=il).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if node.trainable && grads[id].is_none() {
                let (r, c) = node.value.shape();
                grads[id] = Some(DenseMatrix::zeros(r, c));
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn propagate(&self, id: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) {
        let node = &self.nodes[id];
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scaled(-1.0));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_with(val(*b), |x, y| x * y));
                accumulate(grads, *b, g.zip_with(val(*a), |x, y| x * y));
            }
            Op::Scale(a, f) => accumulate(grads, *a, g.scaled(*f)),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                gemm(
                    g.rows(),
                    g.cols(),
                    bv.rows(),
                    1.0,
                    MatRef::normal(g),
                    MatRef::transposed(bv),
                    0.0,
                    &mut ga,
                );
                let mut gb = DenseMatrix::zeros(bv.rows(), bv.cols());
                gemm(
                    av.cols(),
                    av.rows(),
                    g.cols(),
                    1.0,
                    MatRef::transposed(av),
                    MatRef::normal(g),
                    0.0,
                    &mut gb,
                );
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::ConcatCols(ids) => {
                let mut offset = 0;
                for &p in ids {
                    let cols = val(p).cols();
                    let part = DenseMatrix::from_fn(g.rows(), cols, |i, j| g[(i, offset + j)]);
                    accumulate(grads, p, part);
                    offset += cols;
                }
            }
            Op::SliceCols { src, start } => {
                let sv = val(*src);
                let mut full = DenseMatrix::zeros(sv.rows(), sv.cols());
                for i in 0..g.rows() {
                    full.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                accumulate(grads, *src, full);
            }
            Op::SliceRows { src, start } => {
                let sv = val(*src);
                let mut full = DenseMatrix::zeros(sv.rows(), sv.cols());
                for i in 0..g.rows() {
                    full.row_mut(start + i).copy_from_slice(g.row(i));
                }
                accumulate(grads, *src, full);
            }
            Op::SoftmaxRows(a) => {
                let s = &node.value;
                let mut ga = DenseMatrix::zeros(s.rows(), s.cols());
                for i in 0..s.rows() {
                    let (si, gi) = (s.row(i), g.row(i));
                    let dot: f64 = si.iter().zip(gi).map(|(x, y)| x * y).sum();
                    for (o, (x, y)) in ga.row_mut(i).iter_mut().zip(si.iter().zip(gi)) {
                        *o = x * (y - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::LayerNorm { src, inv_std } => {
                let y = &node.value;
                let c = y.cols() as f64;
                let mut ga = DenseMatrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yi, gi) = (y.row(i), g.row(i));
                    let mean_g = gi.iter().sum::<f64>() / c;
                    let mean_gy = gi.iter().zip(yi).map(|(a, b)| a * b).sum::<f64>() / c;
                    for (o, (gv, yv)) in ga.row_mut(i).iter_mut().zip(gi.iter().zip(yi)) {
                        *o = inv_std[i] * (gv - mean_g - yv * mean_gy);
                    }
                }
                accumulate(grads, *src, ga);
            }
            Op::Relu(a) => accumulate(grads, *a, g.zip_with(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
            Op::Tanh(a) => accumulate(grads, *a, g.zip_with(&node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Exp(a) => accumulate(grads, *a, g.zip_with(&node.value, |gv, y| gv * y)),
            Op::MeanAll(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, DenseMatrix::filled(r, c, g[(0, 0)] / (r * c).max(1) as f64));
            }
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, DenseMatrix::filled(r, c, g[(0, 0)]));
            }
            Op::BroadcastRow(a) => {
                let mut sums = DenseMatrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (s, v) in sums.row_mut(0).iter_mut().zip(g.row(i)) {
                        *s += v;
                    }
                }
                accumulate(grads, *a, sums);
            }
            Op::Dropout { src, mask } => {
                let data = g.as_slice().iter().zip(mask).map(|(a, b)| a * b).collect();
                accumulate(
                    grads,
                    *src,
                    DenseMatrix::from_vec(g.rows(), g.cols(), data).expect("finite"),
                );
            }
            Op::SpectralFilter {
                basis,
                lambdas,
                x,
                blocks,
                coeffs,
            } => {
                let (gl, gx) = spectral_filter_backward(basis, val(*lambdas), val(*x).cols(), *blocks, coeffs, g);
                accumulate(grads, *lambdas, gl);
                accumulate(grads, *x, gx);
            }
            Op::BlockColSum { src, blocks } => {
                let n = g.rows() / blocks;
                let mut gx = DenseMatrix::zeros(g.rows(), g.cols());
                for b in 0..*blocks {
                    let mut sums = vec![0.0; g.cols()];
                    for p in 0..n {
                        for (s, v) in sums.iter_mut().zip(g.row(b * n + p)) {
                            *s += v;
                        }
                    }
                    for p in 0..n {
                        gx.row_mut(b * n + p).copy_from_slice(&sums);
                    }
                }
                accumulate(grads, *src, gx);
            }
            Op::Attention(state) => self.attention_backward(state, g, grads),
            Op::BasisMlpConv(state) => self.basis_mlp_backward(state, g, grads),
            Op::CrossEntropy {
                logits,
                labels,
                rows,
                probs,
            } => {
                let lv = val(*logits);
                let scale = g[(0, 0)] / rows.len() as f64;
                let mut gl = DenseMatrix::zeros(lv.rows(), lv.cols());
                for (k, &r) in rows.iter().enumerate() {
                    let out = gl.row_mut(r);
                    for (o, p) in out.iter_mut().zip(probs.row(k)) {
                        *o += scale * p;
                    }
                    out[labels[r]] -= scale;
                }
                accumulate(grads, *logits, gl);
            }
        }
    }

    fn attention_backward(&self, st: &AttentionState, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) {
        let (qv, kv, vv) = (
            &self.nodes[st.q].value,
            &self.nodes[st.k].value,
            &self.nodes[st.v].value,
        );
        let (nq, nk, dh, dv) = (qv.rows(), kv.rows(), qv.cols(), vv.cols());
        let p = &st.probs;

        let mut gv = DenseMatrix::zeros(nk, dv);
        match &st.mask {
            Some(m) => {
                let dropped = masked(p, m);
                gemm(
                    nk,
                    nq,
                    dv,
                    1.0,
                    MatRef::transposed(&dropped),
                    MatRef::normal(g),
                    0.0,
                    &mut gv,
                );
            }
            None => gemm(nk, nq, dv, 1.0, MatRef::transposed(p), MatRef::normal(g), 0.0, &mut gv),
        }

        // gradient of the weights, then through the softmax in place
        let mut gs = DenseMatrix::zeros(nq, nk);
        gemm(nq, dv, nk, 1.0, MatRef::normal(g), MatRef::transposed(vv), 0.0, &mut gs);
        if let Some(m) = &st.mask {
            for (x, k) in gs.as_mut_slice().iter_mut().zip(m) {
                *x *= k;
            }
        }
        for i in 0..nq {
            let pi = p.row(i);
            let row = gs.row_mut(i);
            let dot: f64 = pi.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            for (x, &pv) in row.iter_mut().zip(pi) {
                *x = pv * (*x - dot);
            }
        }

        let mut gq = DenseMatrix::zeros(nq, dh);
        gemm(
            nq,
            nk,
            dh,
            st.scale,
            MatRef::normal(&gs),
            MatRef::normal(kv),
            0.0,
            &mut gq,
        );
        let mut gk = DenseMatrix::zeros(nk, dh);
        gemm(
            nk,
            nq,
            dh,
            st.scale,
            MatRef::transposed(&gs),
            MatRef::normal(qv),
            0.0,
            &mut gk,
        );
        accumulate(grads, st.q, gq);
        accumulate(grads, st.k, gk);
        accumulate(grads, st.v, gv);
    }

    fn basis_mlp_backward(&self, st: &BasisMlpState, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) {
        let val = |i: usize| &self.nodes[i].value;
        let (w1, b1, w2, b2, x) = (val(st.w1), val(st.b1), val(st.w2), val(st.b2), val(st.x));
        let (n, q) = st.basis.shape();
        let heads = st.bases.len();
        let hidden = w1.cols();
        let d = x.cols();
        let mut gw1 = DenseMatrix::zeros(w1.rows(), hidden);
        let mut gb1 = DenseMatrix::zeros(1, hidden);
        let mut gw2 = DenseMatrix::zeros(hidden, d);
        let mut gb2 = DenseMatrix::zeros(1, d);
        let mut gx = DenseMatrix::zeros(x.rows(), d);
        let mut g_bases: Vec<DenseMatrix> = (0..heads).map(|_| DenseMatrix::zeros(n, n)).collect();

        let mut pre = vec![0.0; hidden];
        let mut s = vec![0.0; d];
        let mut ds = vec![0.0; d];
        let mut dpre = vec![0.0; hidden];
        for p in 0..n {
            for r in 0..n {
                mlp_entry(p, r, &st.bases, w1, b1, w2, b2, &mut pre, &mut s);
                ds.iter_mut().for_each(|v| *v = 0.0);
                for b in 0..st.blocks {
                    let gp = g.row(b * n + p);
                    let xr = x.row(b * n + r);
                    let gxr = gx.row_mut(b * n + r);
                    for i in 0..d {
                        ds[i] += gp[i] * xr[i];
                        gxr[i] += s[i] * gp[i];
                    }
                }
                for i in 0..d {
                    gb2[(0, i)] += ds[i];
                }
                for h in 0..hidden {
                    let act = pre[h].max(0.0);
                    let w2h = w2.row(h);
                    let mut dh = 0.0;
                    for i in 0..d {
                        gw2[(h, i)] += act * ds[i];
                        dh += w2h[i] * ds[i];
                    }
                    dpre[h] = if pre[h] > 0.0 { dh } else { 0.0 };
                }
                let delta = if p == r { 1.0 } else { 0.0 };
                for h in 0..hidden {
                    gb1[(0, h)] += dpre[h];
                    gw1[(0, h)] += delta * dpre[h];
                }
                for m in 0..heads {
                    let smv = st.bases[m][(p, r)];
                    let w1m = w1.row(m + 1);
                    let mut dv = 0.0;
                    for h in 0..hidden {
                        gw1[(m + 1, h)] += smv * dpre[h];
                        dv += w1m[h] * dpre[h];
                    }
                    g_bases[m][(p, r)] += dv;
                }
            }
        }

        // dλ_m[k] = u_kᵀ dS_m u_k
        let u = &st.basis;
        let mut gl = DenseMatrix::zeros(q, heads);
        let mut t = DenseMatrix::zeros(n, q);
        for (m, gs) in g_bases.iter().enumerate() {
            gemm(n, n, q, 1.0, MatRef::normal(gs), MatRef::normal(u), 0.0, &mut t);
            for k in 0..q {
                gl[(k, m)] = (0..n).map(|pp| u[(pp, k)] * t[(pp, k)]).sum();
            }
        }
        accumulate(grads, st.lambdas, gl);
        accumulate(grads, st.w1, gw1);
        accumulate(grads, st.b1, gb1);
        accumulate(grads, st.w2, gw2);
        accumulate(grads, st.b2, gb2);
        accumulate(grads, st.x, gx);
    }
}

/// Max-shifted softmax of one row.
fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn masked(m: &DenseMatrix, mask: &[f64]) -> DenseMatrix {
    let data = m.as_slice().iter().zip(mask).map(|(x, k)| x * k).collect();
    DenseMatrix::from_vec(m.rows(), m.cols(), data).expect("finite")
}

fn accumulate(grads: &mut [Option<DenseMatrix>], id: usize, g: DenseMatrix) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// `S_m = U diag(λ[:, m]) Uᵀ`.
fn filtered_basis(u: &DenseMatrix, lambdas: &DenseMatrix, m: usize) -> DenseMatrix {
    let (n, q) = u.shape();
    let scaled = DenseMatrix::from_fn(n, q, |i, k| u[(i, k)] * lambdas[(k, m)]);
    let mut s = DenseMatrix::zeros(n, n);
    gemm(
        n,
        q,
        n,
        1.0,
        MatRef::normal(&scaled),
        MatRef::transposed(u),
        0.0,
        &mut s,
    );
    s
}

#[allow(clippy::too_many_arguments)]
fn mlp_entry(
    p: usize,
    r: usize,
    bases: &[DenseMatrix],
    w1: &DenseMatrix,
    b1: &DenseMatrix,
    w2: &DenseMatrix,
    b2: &DenseMatrix,
    pre: &mut [f64],
    s: &mut [f64],
) {
    let delta = if p == r { 1.0 } else { 0.0 };
    for (h, v) in pre.iter_mut().enumerate() {
        let mut acc = b1[(0, h)] + delta * w1[(0, h)];
        for (m, basis) in bases.iter().enumerate() {
            acc += basis[(p, r)] * w1[(m + 1, h)];
        }
        *v = acc;
    }
    s.copy_from_slice(b2.row(0));
    for (h, &v) in pre.iter().enumerate() {
        if v > 0.0 {
            for (si, w) in s.iter_mut().zip(w2.row(h)) {
                *si += v * w;
            }
        }
    }
}

/// Rearranges `blocks` stacked `n × d` slabs (columns `col0..col0+d` of `src`)
/// side by side into an `n × (blocks·d)` matrix.
fn gather_blocks(src: &DenseMatrix, blocks: usize, n: usize, col0: usize, d: usize) -> DenseMatrix {
    let mut wide = DenseMatrix::zeros(n, blocks * d);
    for b in 0..blocks {
        for p in 0..n {
            wide.row_mut(p)[b * d..(b + 1) * d].copy_from_slice(&src.row(b * n + p)[col0..col0 + d]);
        }
    }
    wide
}

/// Inverse of [`gather_blocks`], writing into columns `col0..col0+d` of `dst`.
fn scatter_blocks(wide: &DenseMatrix, dst: &mut DenseMatrix, blocks: usize, n: usize, col0: usize, d: usize) {
    for b in 0..blocks {
        for p in 0..n {
            dst.row_mut(b * n + p)[col0..col0 + d].copy_from_slice(&wide.row(p)[b * d..(b + 1) * d]);
        }
    }
}

fn spectral_filter_backward(
    basis: &DenseMatrix,
    lambdas: &DenseMatrix,
    d: usize,
    blocks: usize,
    coeffs: &DenseMatrix,
    g: &DenseMatrix,
) -> (DenseMatrix, DenseMatrix) {
    let (n, q) = basis.shape();
    let heads = lambdas.cols();
    let mut gl = DenseMatrix::zeros(q, heads);
    let mut acc = DenseMatrix::zeros(q, blocks * d);
    let mut proj = DenseMatrix::zeros(q, blocks * d);
    for m in 0..heads {
        let gm = gather_blocks(g, blocks, n, m * d, d);
        gemm(
            q,
            n,
            blocks * d,
            1.0,
            MatRef::transposed(basis),
            MatRef::normal(&gm),
            0.0,
            &mut proj,
        );
        for k in 0..q {
            let lam = lambdas[(k, m)];
            let (pk, ck) = (proj.row(k), coeffs.row(k));
            gl[(k, m)] = pk.iter().zip(ck).map(|(a, b)| a * b).sum();
            for (a, p) in acc.row_mut(k).iter_mut().zip(pk) {
                *a += lam * p;
            }
        }
    }
    let mut wide = DenseMatrix::zeros(n, blocks * d);
    gemm(
        n,
        q,
        blocks * d,
        1.0,
        MatRef::normal(basis),
        MatRef::normal(&acc),
        0.0,
        &mut wide,
    );
    let mut gx = DenseMatrix::zeros(blocks * n, d);
    scatter_blocks(&wide, &mut gx, blocks, n, 0, d);
    (gl, gx)
}
