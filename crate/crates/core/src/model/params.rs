use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Combination, Decoder, ModelConfig, ModelError};
use crate::autodiff::ParamSet;
use crate::linalg::DenseMatrix;
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

/// All trainable weights of one model instance, keyed by dotted path.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    set: ParamSet,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredTensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

/// Names, shapes and initializers in a fixed order, so that seeded
/// initialization does not depend on map ordering.
fn layout(c: &ModelConfig) -> Vec<(String, usize, usize, Init)> {
    let d = c.d;
    let dh = c.head_dim();
    let mut out = Vec::new();
    let mut push = |name: String, r: usize, cols: usize, init: Init| out.push((name, r, cols, init));

    push("input.w".into(), c.in_dim, d, Init::Xavier);
    push("input.b".into(), 1, d, Init::Zeros);

    for bank in 0..c.num_banks() {
        let p = c.spectral_prefix(bank);
        push(format!("{p}eig_proj.w"), d + 1, d, Init::Xavier);
        push(format!("{p}eig_proj.b"), 1, d, Init::Zeros);
        for b in 0..c.encoder_blocks {
            let blk = format!("{p}block{b}");
            push(format!("{blk}.ln1.gamma"), 1, d, Init::Ones);
            push(format!("{blk}.ln1.beta"), 1, d, Init::Zeros);
            for w in ["wq", "wk", "wv", "wo"] {
                push(format!("{blk}.attn.{w}"), d, d, Init::Xavier);
            }
            push(format!("{blk}.attn.bo"), 1, d, Init::Zeros);
            push(format!("{blk}.ln2.gamma"), 1, d, Init::Ones);
            push(format!("{blk}.ln2.beta"), 1, d, Init::Zeros);
            push(format!("{blk}.ffn.w1"), d, 2 * d, Init::Xavier);
            push(format!("{blk}.ffn.b1"), 1, 2 * d, Init::Zeros);
            push(format!("{blk}.ffn.w2"), 2 * d, d, Init::Xavier);
            push(format!("{blk}.ffn.b2"), 1, d, Init::Zeros);
        }
        if c.decoder_norm {
            push(format!("{p}decoder.ln.gamma"), 1, d, Init::Ones);
            push(format!("{p}decoder.ln.beta"), 1, d, Init::Zeros);
        }
        for m in 0..c.heads {
            let h = format!("{p}decoder.head{m}");
            if c.decoder == Decoder::Attention {
                for w in ["wq", "wk", "wv"] {
                    push(format!("{h}.{w}"), d, dh, Init::Xavier);
                }
            }
            push(format!("{h}.w_lambda"), dh, 1, Init::Xavier);
            push(format!("{h}.b_lambda"), 1, 1, Init::Zeros);
        }
    }

    let comb_owners = match c.variant {
        super::Variant::Small => 1,
        _ => c.layers,
    };
    for l in 0..comb_owners {
        let p = c.combination_prefix(l);
        match c.combination {
            Combination::Affine => {
                push(format!("{p}w"), c.heads + 1, d, Init::Xavier);
                push(format!("{p}b"), 1, d, Init::Zeros);
            }
            Combination::Mlp => {
                let hdim = c.combination_hidden();
                push(format!("{p}w1"), c.heads + 1, hdim, Init::Xavier);
                push(format!("{p}b1"), 1, hdim, Init::Zeros);
                push(format!("{p}w2"), hdim, d, Init::Xavier);
                push(format!("{p}b2"), 1, d, Init::Zeros);
            }
        }
    }
    for l in 0..c.layers {
        push(format!("layer{l}.wx"), d, d, Init::Xavier);
        push(format!("layer{l}.bx"), 1, d, Init::Zeros);
    }
    push("output.w".into(), d, c.out_dim, Init::Xavier);
    push("output.b".into(), 1, c.out_dim, Init::Zeros);
    out
}

impl ModelParams {
    /// Xavier-uniform weights `U(±√(6/(fan_in+fan_out)))`, zero biases,
    /// unit layer-norm scales, drawn from the init stream of `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = stream(seed, Stream::Init);
        let mut set = ParamSet::new();
        for (name, r, c, init) in layout(config) {
            let m = match init {
                Init::Zeros => DenseMatrix::zeros(r, c),
                Init::Ones => DenseMatrix::filled(r, c, 1.0),
                Init::Xavier => {
                    let a = (6.0 / (r + c) as f64).sqrt();
                    DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-a..a))
                }
            };
            set.insert(name, m);
        }
        Ok(Self { set })
    }

    /// Wraps an existing set after checking it against the layout of `config`.
    pub fn from_set(config: &ModelConfig, set: ParamSet) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(config);
        if expected.len() != set.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                set.len()
            )));
        }
        for (name, r, c, _) in expected {
            match set.get(&name) {
                Some(m) if m.shape() == (r, c) => {}
                Some(m) => {
                    return Err(ModelError::Checkpoint(format!(
                        "`{name}` has shape {:?}, expected {:?}",
                        m.shape(),
                        (r, c)
                    )))
                }
                None => return Err(ModelError::Checkpoint(format!("missing tensor `{name}`"))),
            }
        }
        Ok(Self { set })
    }

    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    pub fn set_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    pub fn into_set(self) -> ParamSet {
        self.set
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        self.set.get(name)
    }

    /// Overwrites one tensor; the shape must stay the same.
    pub fn assign(&mut self, name: &str, value: DenseMatrix) -> Result<(), ModelError> {
        match self.set.get_mut(name) {
            Some(slot) if slot.shape() == value.shape() => {
                *slot = value;
                Ok(())
            }
            Some(slot) => Err(ModelError::Checkpoint(format!(
                "`{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            ))),
            None => Err(ModelError::Checkpoint(format!("unknown tensor `{name}`"))),
        }
    }

    pub fn count(&self) -> usize {
        self.set.scalar_count()
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        let doc: BTreeMap<&str, StoredTensor> = self
            .set
            .iter()
            .map(|(k, v)| {
                (
                    k,
                    StoredTensor {
                        shape: [v.rows(), v.cols()],
                        data: v.as_slice().to_vec(),
                    },
                )
            })
            .collect();
        serde_json::to_string_pretty(&doc).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn from_json(config: &ModelConfig, text: &str) -> Result<Self, ModelError> {
        let doc: BTreeMap<String, StoredTensor> =
            serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut set = ParamSet::new();
        for (name, t) in doc {
            let m = DenseMatrix::from_vec(t.shape[0], t.shape[1], t.data)
                .map_err(|e| ModelError::Checkpoint(format!("`{name}`: {e}")))?;
            set.insert(name, m);
        }
        Self::from_set(config, set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(config: &ModelConfig, path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(config, &text)
    }
}
