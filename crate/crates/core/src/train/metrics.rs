use std::fmt::Write as _;

use serde::Serialize;

use super::TrainError;
use crate::autodiff::{Tape, Var};
use crate::linalg::DenseMatrix;

/// `Σ (pred − target)²` as a tape scalar.
pub fn sse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var, TrainError> {
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.sum_all(sq)?)
}

/// Mean of `−log softmax(logits)[label]` over the rows in `mask`.
pub fn cross_entropy_loss(tape: &mut Tape, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var, TrainError> {
    Ok(tape.cross_entropy(logits, labels, mask)?)
}

pub fn sse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum()
}

/// `1 − SS_res / SS_tot`, with `SS_tot` taken about the target mean.
pub fn r2_score(pred: &[f64], target: &[f64]) -> Result<f64, TrainError> {
    if pred.len() != target.len() || target.is_empty() {
        return Err(TrainError::Shape(format!(
            "r2 of {} predictions against {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(TrainError::UndefinedMetric("r2 of a constant target".into()));
    }
    Ok(1.0 - sse(pred, target) / ss_tot)
}

/// Fraction of `rows` whose arg-max logit equals the label.
pub fn accuracy(logits: &DenseMatrix, labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let hits = rows
        .iter()
        .filter(|&&r| {
            let row = logits.row(r);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            best == labels[r]
        })
        .count();
    hits as f64 / rows.len() as f64
}

/// Mean SSE with R² in parentheses, e.g. `0.0002(.9999)`.
pub fn table_cell(mean_sse: f64, r2: f64) -> String {
    let r = format!("{r2:.4}");
    let r = if let Some(rest) = r.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = r.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        r
    };
    format!("{mean_sse:.4}({r})")
}

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    bad_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        StopDecision {
            improved,
            stop: self.bad_epochs >= self.patience,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Loss curves and final metrics of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(skip)]
    pub epochs: Vec<EpochRecord>,
    pub final_sse: Option<f64>,
    pub r2: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub seconds: f64,
    pub param_count: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Scientific notation with 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl MetricsReport {
    /// `epoch,train_loss,val_loss`; the last column is empty when absent.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            let val = r.val_loss.map(format_float).unwrap_or_default();
            writeln!(s, "{},{},{}", r.epoch, format_float(r.train_loss), val).expect("write to string");
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
