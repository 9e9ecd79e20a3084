use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CliError, NodeClsArgs, SynthArgs, TrainOverrides};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Ends of the spectrum kept by `nodecls --truncate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    pub smallest: usize,
    pub largest: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub filter: String,
    pub height: usize,
    pub width: usize,
    pub images: usize,
    pub max_points: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            filter: "lowpass".into(),
            height: 32,
            width: 32,
            images: 10,
            max_points: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodeClsConfig {
    pub data: Option<PathBuf>,
    pub runs: usize,
    pub truncate: Option<Truncation>,
    pub parallel: bool,
}

impl Default for NodeClsConfig {
    fn default() -> Self {
        Self {
            data: None,
            runs: 1,
            truncate: None,
            parallel: false,
        }
    }
}

/// Everything a command needs. `model.in_dim` and `model.out_dim` are
/// replaced by the data's widths before training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub nodecls: NodeClsConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    fn apply_train(&mut self, t: &TrainOverrides, seed: Option<u64>) {
        if let Some(v) = t.max_epochs {
            self.train.max_epochs = v;
        }
        if let Some(v) = t.patience {
            self.train.patience = v;
        }
        if let Some(v) = t.lr {
            self.train.adam.lr = v;
        }
        if let Some(v) = t.weight_decay {
            self.train.adam.weight_decay = v;
        }
        if let Some(s) = seed {
            self.train.seed = s;
        }
    }

    pub fn with_synth_args(mut self, a: &SynthArgs, seed: Option<u64>) -> Self {
        if let Some(f) = &a.filter {
            self.synth.filter = f.to_string();
        }
        if let Some((h, w)) = a.grid {
            self.synth.height = h;
            self.synth.width = w;
        }
        if let Some(v) = a.images {
            self.synth.images = v;
        }
        if let Some(v) = a.max_points {
            self.synth.max_points = v;
        }
        self.apply_train(&a.train, seed);
        self
    }

    pub fn with_nodecls_args(mut self, a: &NodeClsArgs, seed: Option<u64>) -> Self {
        if let Some(d) = &a.data {
            self.nodecls.data = Some(d.clone());
        }
        if let Some(r) = a.runs {
            self.nodecls.runs = r;
        }
        if let Some(t) = a.truncate {
            self.nodecls.truncate = Some(t);
        }
        self.nodecls.parallel |= a.parallel;
        self.apply_train(&a.train, seed);
        self
    }
}
