//! Adam, losses, metrics, early stopping and the two training loops.

mod adam;
mod metrics;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use metrics::{
    accuracy, cross_entropy_loss, format_float, r2_score, sse, sse_loss, table_cell, EarlyStopping, EpochRecord,
    MetricsReport, StopDecision,
};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape};
use crate::graph::{GraphError, SparseGraph, Split, SyntheticTask};
use crate::linalg::DenseMatrix;
use crate::model::{ModelConfig, ModelError, ModelParams, Session, SpectralInput};
use crate::rng::{stream, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite training loss at epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 2000,
            patience: 200,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be positive".into()));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(TrainError::Config(format!(
                "patience must lie in 1..={}, got {}",
                self.max_epochs, self.patience
            )));
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.weight_decay < 0.0 {
            return Err(TrainError::Config("adam hyperparameters out of range".into()));
        }
        Ok(())
    }
}

/// Result of [`train_synthetic`].
#[derive(Clone, Debug)]
pub struct SyntheticOutcome {
    pub report: MetricsReport,
    /// Parameters at the epoch with the lowest training loss.
    pub params: ModelParams,
    /// Head-0 decoded eigenvalues of the first filter bank, one per retained eigenvalue.
    pub learned_filter: Vec<f64>,
    /// Attention of the last encoder block of the first stack, averaged over heads.
    pub attention: DenseMatrix,
    pub per_image_sse: Vec<f64>,
    pub per_image_r2: Vec<f64>,
}

/// Full-batch regression of filtered targets from their inputs.
///
/// Every step uses all signals; the loss is the per-image sum of squared
/// errors averaged over images. Training stops after `patience` epochs
/// without a lower training loss, and the lowest-loss parameters are
/// evaluated.
pub fn train_synthetic(
    task: &SyntheticTask,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<SyntheticOutcome, TrainError> {
    train.validate()?;
    if model.in_dim != 1 || model.out_dim != 1 {
        return Err(TrainError::Config("synthetic signals need in_dim = out_dim = 1".into()));
    }
    let images = task.signals.len();
    if images == 0 {
        return Err(TrainError::Config("no signals".into()));
    }
    let start = Instant::now();
    let spectral = SpectralInput::new(&task.eigensystem, model)?;
    let inputs = task.stacked_inputs();
    let targets = task.stacked_targets();
    let mut params = ModelParams::init(model, train.seed)?;
    let mut best = params.clone();
    let mut adam = AdamState::new();
    let mut dropout_rng = stream(train.seed, Stream::Dropout);
    let mut stopper = EarlyStopping::new(train.patience);
    let mut report = MetricsReport {
        param_count: params.count(),
        ..MetricsReport::default()
    };

    for epoch in 1..=train.max_epochs {
        let mut tape = Tape::new();
        let vars = params.set().register(&mut tape);
        let x = tape.constant(inputs.clone());
        let y = tape.constant(targets.clone());
        let out = Session::train(&mut tape, &vars, model, &mut dropout_rng).forward(&spectral, x, images)?;
        let total = sse_loss(&mut tape, out.output, y)?;
        let loss = tape.scale(total, 1.0 / images as f64)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        let grads = vars.collect(&tape.backward(loss)?);
        drop(tape);

        report.epochs.push(EpochRecord {
            epoch,
            train_loss: value,
            val_loss: None,
        });
        let decision = stopper.update(epoch, value);
        if decision.improved {
            best = params.clone();
        }
        if decision.stop {
            break;
        }
        adam_step(params.set_mut(), &grads, &mut adam, &train.adam)?;
    }

    let eval = evaluate_synthetic(task, model, &best, &spectral)?;
    report.final_sse = Some(mean(&eval.per_image_sse));
    report.r2 = Some(mean(&eval.per_image_r2));
    report.best_epoch = stopper.best_epoch().unwrap_or(0);
    report.epochs_run = report.epochs.len();
    report.seconds = start.elapsed().as_secs_f64();
    Ok(SyntheticOutcome {
        report,
        params: best,
        learned_filter: eval.learned_filter,
        attention: eval.attention,
        per_image_sse: eval.per_image_sse,
        per_image_r2: eval.per_image_r2,
    })
}

struct SyntheticEval {
    per_image_sse: Vec<f64>,
    per_image_r2: Vec<f64>,
    learned_filter: Vec<f64>,
    attention: DenseMatrix,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn evaluate_synthetic(
    task: &SyntheticTask,
    model: &ModelConfig,
    params: &ModelParams,
    spectral: &SpectralInput,
) -> Result<SyntheticEval, TrainError> {
    let n = task.num_nodes();
    let images = task.signals.len();
    let mut tape = Tape::new();
    let vars = params.set().register(&mut tape);
    let x = tape.constant(task.stacked_inputs());
    let out = Session::eval(&mut tape, &vars, model).forward(spectral, x, images)?;
    let pred = tape.value(out.output).as_slice();
    let mut per_image_sse = Vec::with_capacity(images);
    let mut per_image_r2 = Vec::with_capacity(images);
    for (b, s) in task.signals.iter().enumerate() {
        let p = &pred[b * n..(b + 1) * n];
        per_image_sse.push(sse(p, &s.target));
        per_image_r2.push(r2_score(p, &s.target)?);
    }
    let learned_filter = tape.value(out.banks[0].lambdas).column_vec(0);
    let attention = average_attention(&tape, out.attention.last().map(Vec::as_slice).unwrap_or(&[]), spectral);
    Ok(SyntheticEval {
        per_image_sse,
        per_image_r2,
        learned_filter,
        attention,
    })
}

fn average_attention(tape: &Tape, maps: &[crate::autodiff::Var], spectral: &SpectralInput) -> DenseMatrix {
    let q = spectral.num_retained();
    if maps.is_empty() {
        return DenseMatrix::identity(q);
    }
    let mut acc = DenseMatrix::zeros(q, q);
    for m in maps {
        acc.add_assign(tape.attention_weights(*m).expect("attention output"));
    }
    acc.scaled(1.0 / maps.len() as f64)
}

/// Result of [`train_nodecls`].
#[derive(Clone, Debug)]
pub struct NodeOutcome {
    pub report: MetricsReport,
    /// Parameters at the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub best_val_loss: f64,
}

/// Cross-entropy training on `split.train`, early stopping on the
/// validation loss, and test accuracy of the best checkpoint.
pub fn train_nodecls(
    graph: &SparseGraph,
    spectral: &SpectralInput,
    split: &Split,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<NodeOutcome, TrainError> {
    train.validate()?;
    let labels = graph
        .labels()
        .ok_or_else(|| TrainError::Config("graph has no labels".into()))?;
    let features = graph
        .features()
        .ok_or_else(|| TrainError::Config("graph has no features".into()))?;
    if features.cols() != model.in_dim || graph.num_classes() > model.out_dim {
        return Err(TrainError::Config(format!(
            "model maps {} -> {}, data has {} features and {} classes",
            model.in_dim,
            model.out_dim,
            features.cols(),
            graph.num_classes()
        )));
    }
    if spectral.num_nodes() != graph.num_nodes() {
        return Err(TrainError::Shape(format!(
            "spectrum covers {} nodes, graph has {}",
            spectral.num_nodes(),
            graph.num_nodes()
        )));
    }
    let start = Instant::now();
    let mut params = ModelParams::init(model, train.seed)?;
    let mut best = params.clone();
    let mut adam = AdamState::new();
    let mut dropout_rng = stream(train.seed, Stream::Dropout);
    let mut stopper = EarlyStopping::new(train.patience);
    let mut report = MetricsReport {
        param_count: params.count(),
        ..MetricsReport::default()
    };

    for epoch in 1..=train.max_epochs {
        let mut tape = Tape::new();
        let vars = params.set().register(&mut tape);
        let x = tape.constant(features.clone());
        let out = Session::train(&mut tape, &vars, model, &mut dropout_rng).forward(spectral, x, 1)?;
        let loss = cross_entropy_loss(&mut tape, out.output, labels, &split.train)?;
        let train_loss = tape.scalar(loss);
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        let grads = vars.collect(&tape.backward(loss)?);
        drop(tape);
        adam_step(params.set_mut(), &grads, &mut adam, &train.adam)?;

        let val_loss = masked_loss(&params, model, spectral, features, labels, &split.val)?;
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: Some(val_loss),
        });
        let decision = stopper.update(epoch, val_loss);
        if decision.improved {
            best = params.clone();
        }
        if decision.stop {
            break;
        }
    }

    let logits = predict(&best, model, spectral, features)?;
    report.test_accuracy = Some(accuracy(&logits, labels, &split.test));
    report.best_epoch = stopper.best_epoch().unwrap_or(0);
    report.epochs_run = report.epochs.len();
    report.seconds = start.elapsed().as_secs_f64();
    Ok(NodeOutcome {
        report,
        params: best,
        best_val_loss: stopper.best(),
    })
}

/// Evaluation-mode outputs for every node.
pub fn predict(
    params: &ModelParams,
    model: &ModelConfig,
    spectral: &SpectralInput,
    features: &DenseMatrix,
) -> Result<DenseMatrix, TrainError> {
    let mut tape = Tape::new();
    let vars = params.set().register(&mut tape);
    let x = tape.constant(features.clone());
    let out = Session::eval(&mut tape, &vars, model).forward(spectral, x, 1)?;
    Ok(tape.value(out.output).clone())
}

fn masked_loss(
    params: &ModelParams,
    model: &ModelConfig,
    spectral: &SpectralInput,
    features: &DenseMatrix,
    labels: &[usize],
    rows: &[usize],
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let vars = params.set().register(&mut tape);
    let x = tape.constant(features.clone());
    let out = Session::eval(&mut tape, &vars, model).forward(spectral, x, 1)?;
    let loss = cross_entropy_loss(&mut tape, out.output, labels, rows)?;
    Ok(tape.scalar(loss))
}
