use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::{eigenvalue_encoding, Activation, Combination, Decoder, ModelConfig, ModelError};
use crate::autodiff::{ParamVars, Tape, Var};
use crate::linalg::{DenseMatrix, Spectrum};

/// The parts of a spectrum the model consumes, with the encoding precomputed.
#[derive(Clone, Debug)]
pub struct SpectralInput {
    eigenvalues: Vec<f64>,
    basis: Arc<DenseMatrix>,
    encoding: DenseMatrix,
}

impl SpectralInput {
    pub fn new<S: Spectrum + ?Sized>(spectrum: &S, config: &ModelConfig) -> Result<Self, ModelError> {
        Ok(Self {
            eigenvalues: spectrum.eigenvalues().to_vec(),
            basis: spectrum.shared_eigenvectors(),
            encoding: eigenvalue_encoding(spectrum.eigenvalues(), config.d, config.epsilon)?,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &Arc<DenseMatrix> {
        &self.basis
    }

    pub fn encoding(&self) -> &DenseMatrix {
        &self.encoding
    }

    pub fn num_nodes(&self) -> usize {
        self.basis.rows()
    }

    pub fn num_retained(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Decoded eigenvalues: `q × M`, column `m` is head `m`.
#[derive(Clone, Copy, Debug)]
pub struct FilterBank {
    pub lambdas: Var,
}

/// Result of [`Session::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub output: Var,
    /// One bank per distinct filter set, in layer order.
    pub banks: Vec<FilterBank>,
    /// Attention outputs of every encoder block of the first stack,
    /// `[block][head]`; see [`Tape::attention_weights`].
    pub attention: Vec<Vec<Var>>,
}

/// One pass of the model over a tape.
///
/// With an RNG the session runs in training mode and applies dropout;
/// without one it is the deterministic evaluation pass.
pub struct Session<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a ParamVars,
    pub config: &'a ModelConfig,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Session<'a> {
    pub fn eval(tape: &'a mut Tape, params: &'a ParamVars, config: &'a ModelConfig) -> Self {
        Self {
            tape,
            params,
            config,
            rng: None,
        }
    }

    pub fn train(tape: &'a mut Tape, params: &'a ParamVars, config: &'a ModelConfig, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            tape,
            params,
            config,
            rng: Some(rng),
        }
    }

    fn p(&self, name: &str) -> Result<Var, ModelError> {
        Ok(self.params.get(name)?)
    }

    fn dropout(&mut self, v: Var, rate: f64) -> Result<Var, ModelError> {
        match self.rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => Ok(self.tape.dropout(v, rate, true, rng)?),
            _ => Ok(v),
        }
    }

    fn linear(&mut self, x: Var, w: &str, b: &str) -> Result<Var, ModelError> {
        let (w, b) = (self.p(w)?, self.p(b)?);
        let y = self.tape.matmul(x, w)?;
        Ok(self.tape.add_row(y, b)?)
    }

    fn layer_norm(&mut self, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let (g, b) = (self.p(&format!("{prefix}.gamma"))?, self.p(&format!("{prefix}.beta"))?);
        let y = self.tape.layer_norm(x)?;
        let y = self.tape.mul_row(y, g)?;
        Ok(self.tape.add_row(y, b)?)
    }

    fn activate(&mut self, x: Var, act: Activation) -> Result<Var, ModelError> {
        Ok(match act {
            Activation::None => x,
            Activation::Relu => self.tape.relu(x)?,
            Activation::Tanh => self.tape.tanh(x)?,
        })
    }

    /// `softmax(q kᵀ / √width) v`, with transformer dropout on the weights.
    fn attend(&mut self, q: Var, k: Var, v: Var) -> Result<Var, ModelError> {
        let rate = self.config.transformer_dropout;
        let dropout = match self.rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => Some((rate, rng)),
            _ => None,
        };
        Ok(self.tape.attention(q, k, v, dropout)?)
    }

    /// Eigenvalue encoding followed by the `(d+1) → d` projection.
    pub fn embed_eigenvalues(&mut self, spectral: &SpectralInput, prefix: &str) -> Result<Var, ModelError> {
        let e = self.tape.constant(spectral.encoding().clone());
        self.linear(e, &format!("{prefix}eig_proj.w"), &format!("{prefix}eig_proj.b"))
    }

    /// Pre-norm block: `Z̃ = MHA(LN(Z)) + Z`, `Ẑ = FFN(LN(Z̃)) + Z̃`.
    ///
    /// Returns the block output and the per-head attention outputs, whose
    /// weights are available through [`Tape::attention_weights`].
    pub fn encoder_block(&mut self, z: Var, prefix: &str) -> Result<(Var, Vec<Var>), ModelError> {
        let d = self.config.d;
        if z.cols() != d {
            return Err(ModelError::Shape(format!(
                "encoder block expects width {d}, got {}",
                z.cols()
            )));
        }
        let dh = self.config.head_dim();
        let h = self.layer_norm(z, &format!("{prefix}.ln1"))?;
        let q = self.tape.matmul(h, self.p(&format!("{prefix}.attn.wq"))?)?;
        let k = self.tape.matmul(h, self.p(&format!("{prefix}.attn.wk"))?)?;
        let v = self.tape.matmul(h, self.p(&format!("{prefix}.attn.wv"))?)?;
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut maps = Vec::with_capacity(self.config.heads);
        for m in 0..self.config.heads {
            let qm = self.tape.slice_cols(q, m * dh, dh)?;
            let km = self.tape.slice_cols(k, m * dh, dh)?;
            let vm = self.tape.slice_cols(v, m * dh, dh)?;
            let a = self.attend(qm, km, vm)?;
            maps.push(a);
            heads.push(a);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            self.tape.concat_cols(&heads)?
        };
        let attn = self.linear(cat, &format!("{prefix}.attn.wo"), &format!("{prefix}.attn.bo"))?;
        let z1 = self.tape.add(attn, z)?;

        let h2 = self.layer_norm(z1, &format!("{prefix}.ln2"))?;
        let f = self.linear(h2, &format!("{prefix}.ffn.w1"), &format!("{prefix}.ffn.b1"))?;
        let f = self.tape.relu(f)?;
        let rate = self.config.transformer_dropout;
        let f = self.dropout(f, rate)?;
        let f = self.linear(f, &format!("{prefix}.ffn.w2"), &format!("{prefix}.ffn.b2"))?;
        Ok((self.tape.add(f, z1)?, maps))
    }

    /// Per head `m`: `λ_m = φ(Z_m W_λ + b_λ)`, where `Z_m` is column slice `m`
    /// of the normalized input (linear decoder) or
    /// `softmax(Q_m K_mᵀ/√(d/M)) V_m` (attention decoder).
    pub fn decode_filters(&mut self, z: Var, prefix: &str) -> Result<FilterBank, ModelError> {
        if z.cols() != self.config.d {
            return Err(ModelError::Shape(format!(
                "decoder expects width {}, got {}",
                self.config.d,
                z.cols()
            )));
        }
        let h = if self.config.decoder_norm {
            self.layer_norm(z, &format!("{prefix}decoder.ln"))?
        } else {
            z
        };
        let dh = self.config.head_dim();
        let mut cols = Vec::with_capacity(self.config.heads);
        for m in 0..self.config.heads {
            let hp = format!("{prefix}decoder.head{m}");
            let zm = match self.config.decoder {
                Decoder::Linear if self.config.heads == 1 => h,
                Decoder::Linear => self.tape.slice_cols(h, m * dh, dh)?,
                Decoder::Attention => {
                    let q = self.tape.matmul(h, self.p(&format!("{hp}.wq"))?)?;
                    let k = self.tape.matmul(h, self.p(&format!("{hp}.wk"))?)?;
                    let v = self.tape.matmul(h, self.p(&format!("{hp}.wv"))?)?;
                    self.attend(q, k, v)?
                }
            };
            let pre = self.linear(zm, &format!("{hp}.w_lambda"), &format!("{hp}.b_lambda"))?;
            cols.push(self.activate(pre, self.config.decoder_activation)?);
        }
        let lambdas = if cols.len() == 1 {
            cols[0]
        } else {
            self.tape.concat_cols(&cols)?
        };
        Ok(FilterBank { lambdas })
    }

    /// Encoder stack plus decoder for the filter set named by `prefix`.
    pub fn filter_bank(
        &mut self,
        spectral: &SpectralInput,
        prefix: &str,
    ) -> Result<(FilterBank, Vec<Vec<Var>>), ModelError> {
        let mut z = self.embed_eigenvalues(spectral, prefix)?;
        let mut maps = Vec::with_capacity(self.config.encoder_blocks);
        for b in 0..self.config.encoder_blocks {
            let (next, m) = self.encoder_block(z, &format!("{prefix}block{b}"))?;
            z = next;
            maps.push(m);
        }
        Ok((self.decode_filters(z, prefix)?, maps))
    }

    /// Channel-wise convolution with the combined basis
    /// `Ŝ_{:,:,i} = w_{0,i} I + Σ_m w_{m,i} S_m + b_i 11ᵀ` (affine mode) or the
    /// two-layer per-entry network (mlp mode), applied to each of `blocks`
    /// stacked signals in `x`.
    pub fn convolve(
        &mut self,
        spectral: &SpectralInput,
        bank: FilterBank,
        x: Var,
        blocks: usize,
        comb_prefix: &str,
    ) -> Result<Var, ModelError> {
        let d = self.config.d;
        if x.cols() != d {
            return Err(ModelError::Shape(format!(
                "convolution expects width {d}, got {}",
                x.cols()
            )));
        }
        let basis = Arc::clone(spectral.basis());
        match self.config.combination {
            Combination::Affine => {
                let w = self.p(&format!("{comb_prefix}w"))?;
                let b = self.p(&format!("{comb_prefix}b"))?;
                let w0 = self.tape.slice_rows(w, 0, 1)?;
                let mut acc = self.tape.mul_row(x, w0)?;
                let filtered = self.tape.spectral_filter(basis, bank.lambdas, x, blocks)?;
                for m in 0..self.config.heads {
                    let part = self.tape.slice_cols(filtered, m * d, d)?;
                    let wm = self.tape.slice_rows(w, m + 1, 1)?;
                    let term = self.tape.mul_row(part, wm)?;
                    acc = self.tape.add(acc, term)?;
                }
                let sums = self.tape.block_col_sum(x, blocks)?;
                let bias = self.tape.mul_row(sums, b)?;
                Ok(self.tape.add(acc, bias)?)
            }
            Combination::Mlp => {
                let names = ["w1", "b1", "w2", "b2"].map(|s| format!("{comb_prefix}{s}"));
                let [w1, b1, w2, b2] = [
                    self.p(&names[0])?,
                    self.p(&names[1])?,
                    self.p(&names[2])?,
                    self.p(&names[3])?,
                ];
                Ok(self
                    .tape
                    .basis_mlp_conv(basis, bank.lambdas, w1, b1, w2, b2, x, blocks)?)
            }
        }
    }

    /// `σ(dropout(X̂) W_x + b_x)`, plus `X` when the residual is enabled.
    pub fn layer_update(&mut self, x: Var, x_hat: Var, layer: usize) -> Result<Var, ModelError> {
        let rate = self.config.propagation_dropout;
        let x_hat = self.dropout(x_hat, rate)?;
        let y = self.linear(x_hat, &format!("layer{layer}.wx"), &format!("layer{layer}.bx"))?;
        let y = self.activate(y, self.config.conv_activation)?;
        if self.config.residual {
            Ok(self.tape.add(y, x)?)
        } else {
            Ok(y)
        }
    }

    /// Full model on `blocks` signals stacked vertically in `x` (`(blocks·n) × in_dim`).
    pub fn forward(&mut self, spectral: &SpectralInput, x: Var, blocks: usize) -> Result<ForwardOutput, ModelError> {
        let n = spectral.num_nodes();
        if blocks == 0 || x.rows() != blocks * n || x.cols() != self.config.in_dim {
            return Err(ModelError::Shape(format!(
                "input is {}x{}, expected ({blocks}·{n})x{}",
                x.rows(),
                x.cols(),
                self.config.in_dim
            )));
        }
        let mut h = self.linear(x, "input.w", "input.b")?;
        let rate = self.config.feature_dropout;
        h = self.dropout(h, rate)?;

        let mut banks = Vec::with_capacity(self.config.num_banks());
        let mut attention = Vec::new();
        for layer in 0..self.config.layers {
            if layer < self.config.num_banks() {
                let prefix = self.config.spectral_prefix(layer);
                let (bank, maps) = self.filter_bank(spectral, &prefix)?;
                if layer == 0 {
                    attention = maps;
                }
                banks.push(bank);
            }
            let bank = banks[layer.min(banks.len() - 1)];
            let comb = self.config.combination_prefix(layer);
            let x_hat = self.convolve(spectral, bank, h, blocks, &comb)?;
            h = self.layer_update(h, x_hat, layer)?;
        }
        let output = self.linear(h, "output.w", "output.b")?;
        Ok(ForwardOutput {
            output,
            banks,
            attention,
        })
    }
}
