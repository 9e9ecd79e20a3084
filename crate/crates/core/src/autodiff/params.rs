use std::collections::BTreeMap;

use super::{AutodiffError, Gradients, Tape, Var};
use crate::linalg::DenseMatrix;

/// Named trainable matrices, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    values: BTreeMap<String, DenseMatrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseMatrix) -> Option<DenseMatrix> {
        self.values.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseMatrix> {
        self.values.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseMatrix)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut DenseMatrix)> {
        self.values.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Number of named matrices.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.values.values().map(|m| m.rows() * m.cols()).sum()
    }

    /// Places every matrix on `tape` as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let vars = self
            .values
            .iter()
            .map(|(k, v)| (k.clone(), tape.param(v.clone())))
            .collect();
        ParamVars { vars }
    }
}

/// Tape handles for a registered [`ParamSet`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var, AutodiffError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients keyed by parameter name.
    pub fn collect(&self, grads: &Gradients) -> BTreeMap<String, DenseMatrix> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let g = grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| DenseMatrix::zeros(v.rows(), v.cols()));
                (k.clone(), g)
            })
            .collect()
    }
}
