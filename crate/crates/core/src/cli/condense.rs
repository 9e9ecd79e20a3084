//! Band-level summary of an eigenvalue attention matrix.

use std::fmt;

use crate::linalg::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Band {
    Low,
    Medium,
    High,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Low, Band::Medium, Band::High];

    /// Low is `[0, 2/3)`, Medium `[2/3, 4/3)`, High `[4/3, 2]`.
    pub fn of(lambda: f64) -> Band {
        if lambda < 2.0 / 3.0 {
            Band::Low
        } else if lambda < 4.0 / 3.0 {
            Band::Medium
        } else {
            Band::High
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Low => "low",
            Band::Medium => "medium",
            Band::High => "high",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CondenseError {
    NotSquare { rows: usize, cols: usize },
    LengthMismatch { matrix: usize, lambdas: usize },
    NotRowStochastic { row: usize, sum: f64 },
    EigenvalueOutOfRange { index: usize, value: f64 },
}

impl fmt::Display for CondenseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CondenseError::NotSquare { rows, cols } => write!(f, "attention matrix is {rows}x{cols}, expected square"),
            CondenseError::LengthMismatch { matrix, lambdas } => {
                write!(
                    f,
                    "attention matrix has {matrix} rows but {lambdas} eigenvalues were given"
                )
            }
            CondenseError::NotRowStochastic { row, sum } => write!(f, "row {row} sums to {sum}, expected 1"),
            CondenseError::EigenvalueOutOfRange { index, value } => {
                write!(f, "eigenvalue {index} is {value}, outside [0, 2]")
            }
        }
    }
}

impl std::error::Error for CondenseError {}

/// Row sums must be within this distance of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;
/// Slack on the `[0, 2]` eigenvalue range for rounding in the eigensolver.
pub const RANGE_SLACK: f64 = 1e-10;

/// 3×3 band matrix; `None` where the source or destination band is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct CondensedAttention {
    pub matrix: [[Option<f64>; 3]; 3],
    pub counts: [usize; 3],
}

impl CondensedAttention {
    pub fn get(&self, from: Band, to: Band) -> Option<f64> {
        self.matrix[from.index()][to.index()]
    }

    /// Sum of a source band's row, when every entry is defined.
    pub fn row_sum(&self, from: Band) -> Option<f64> {
        self.matrix[from.index()].iter().copied().sum()
    }

    /// `band,count,low,medium,high`; undefined cells read `undefined`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("band,count,low,medium,high\n");
        for b in Band::ALL {
            s.push_str(b.name());
            s.push(',');
            s.push_str(&self.counts[b.index()].to_string());
            for cell in self.matrix[b.index()] {
                s.push(',');
                match cell {
                    Some(v) => s.push_str(&crate::train::format_float(v)),
                    None => s.push_str("undefined"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// `B̂[i][j] = Σ_{p∈i} Σ_{r∈j} B[p][r] / |i|` over the three bands.
pub fn condense_attention(b: &DenseMatrix, lambdas: &[f64]) -> Result<CondensedAttention, CondenseError> {
    let (rows, cols) = b.shape();
    if rows != cols {
        return Err(CondenseError::NotSquare { rows, cols });
    }
    if rows != lambdas.len() {
        return Err(CondenseError::LengthMismatch {
            matrix: rows,
            lambdas: lambdas.len(),
        });
    }
    for (index, &value) in lambdas.iter().enumerate() {
        if !(value >= -RANGE_SLACK && value <= 2.0 + RANGE_SLACK) {
            return Err(CondenseError::EigenvalueOutOfRange { index, value });
        }
    }
    for row in 0..rows {
        let sum: f64 = b.row(row).iter().sum();
        if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
            return Err(CondenseError::NotRowStochastic { row, sum });
        }
    }

    let bands: Vec<usize> = lambdas.iter().map(|&l| Band::of(l).index()).collect();
    let mut counts = [0usize; 3];
    for &k in &bands {
        counts[k] += 1;
    }
    let mut sums = [[0.0f64; 3]; 3];
    for (p, &bp) in bands.iter().enumerate() {
        for (r, &br) in bands.iter().enumerate() {
            sums[bp][br] += b[(p, r)];
        }
    }
    let mut matrix = [[None; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            if counts[i] > 0 && counts[j] > 0 {
                matrix[i][j] = Some(sums[i][j] / counts[i] as f64);
            }
        }
    }
    Ok(CondensedAttention { matrix, counts })
}
