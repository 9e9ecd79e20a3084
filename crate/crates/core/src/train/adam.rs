use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::ParamSet;
use crate::linalg::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: `p ← p − lr·wd·p` alongside the Adam step.
    pub weight_decay: f64,
    /// Rescale the joint gradient to at most this L2 norm.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: None,
        }
    }
}

/// First and second moments per parameter, plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, DenseMatrix>,
    pub v: BTreeMap<String, DenseMatrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &BTreeMap<String, DenseMatrix>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    for (name, p) in params.iter() {
        match grads.get(name) {
            Some(g) if g.shape() == p.shape() => {}
            Some(g) => {
                return Err(TrainError::Shape(format!(
                    "gradient of `{name}` is {:?}, parameter is {:?}",
                    g.shape(),
                    p.shape()
                )))
            }
            None => return Err(TrainError::Shape(format!("no gradient for `{name}`"))),
        }
    }
    let clip = match cfg.max_grad_norm {
        Some(max) => {
            let norm = grads
                .values()
                .flat_map(|g| g.as_slice())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let (rows, cols) = p.shape();
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| DenseMatrix::zeros(rows, cols));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| DenseMatrix::zeros(rows, cols));
        for (((pi, &gi), mi), vi) in p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            let gi = gi * clip;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *pi);
        }
    }
    Ok(())
}
