use serde::{Deserialize, Serialize};

use super::ModelError;

/// Weight sharing across graph-convolution layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One filter bank and one combination network for every layer.
    Small,
    /// One filter bank, a combination network per layer.
    Medium,
    /// A filter bank and a combination network per layer.
    Large,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Tanh,
}

/// How the identity channel and the `M` filtered bases are mixed per feature channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combination {
    /// One weight per (basis, channel) plus a per-channel bias.
    Affine,
    /// Two layers of width `2(M+1)` with relu, evaluated per node pair.
    Mlp,
}

/// How each head's new eigenvalues are read from the encoder output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    /// Head `m` takes column slice `m` of the normalized encoder output.
    Linear,
    /// Head `m` runs its own attention with dedicated `W^Q_m, W^K_m, W^V_m`.
    Attention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Hidden width; even and divisible by `heads`.
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub encoder_blocks: usize,
    /// Scale of the eigenvalue encoding.
    pub epsilon: f64,
    pub decoder: Decoder,
    pub decoder_activation: Activation,
    /// Layer norm (with affine terms) in front of the decoder.
    pub decoder_norm: bool,
    /// Nonlinearity after the per-layer feature transform.
    pub conv_activation: Activation,
    pub residual: bool,
    pub combination: Combination,
    pub transformer_dropout: f64,
    pub feature_dropout: f64,
    pub propagation_dropout: f64,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Small,
            d: 16,
            heads: 1,
            layers: 1,
            encoder_blocks: 1,
            epsilon: 100.0,
            decoder: Decoder::Linear,
            decoder_activation: Activation::None,
            decoder_norm: true,
            conv_activation: Activation::Relu,
            residual: true,
            combination: Combination::Affine,
            transformer_dropout: 0.0,
            feature_dropout: 0.0,
            propagation_dropout: 0.0,
            in_dim: 1,
            out_dim: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.d == 0 || self.d % 2 != 0 {
            return fail(format!("d must be even and positive, got {}", self.d));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return fail(format!("heads ({}) must divide d ({})", self.heads, self.d));
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.in_dim == 0 || self.out_dim == 0 {
            return fail("in_dim and out_dim must be positive".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        for (name, p) in [
            ("transformer_dropout", self.transformer_dropout),
            ("feature_dropout", self.feature_dropout),
            ("propagation_dropout", self.propagation_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Width of the combination network's hidden layer.
    pub fn combination_hidden(&self) -> usize {
        2 * (self.heads + 1)
    }

    /// Name prefix of the encoder/decoder stack serving `layer`.
    pub fn spectral_prefix(&self, layer: usize) -> String {
        match self.variant {
            Variant::Small | Variant::Medium => String::new(),
            Variant::Large => format!("layer{layer}."),
        }
    }

    /// Name prefix of the combination network serving `layer`.
    pub fn combination_prefix(&self, layer: usize) -> String {
        match self.variant {
            Variant::Small => "comb.".into(),
            Variant::Medium | Variant::Large => format!("layer{layer}.comb."),
        }
    }

    /// Number of distinct filter banks.
    pub fn num_banks(&self) -> usize {
        match self.variant {
            Variant::Small | Variant::Medium => 1,
            Variant::Large => self.layers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = |f: fn(&mut ModelConfig)| {
            let mut c = ModelConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.d = 7));
        assert!(bad(|c| c.heads = 3));
        assert!(bad(|c| c.heads = 0));
        assert!(bad(|c| c.feature_dropout = 1.0));
        assert!(bad(|c| c.layers = 0));
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let c: ModelConfig = serde_json::from_str(r#"{"variant":"large","heads":4}"#).unwrap();
        assert_eq!((c.variant, c.heads, c.d), (Variant::Large, 4, 16));
        assert!(serde_json::from_str::<ModelConfig>(r#"{"widht":3}"#).is_err());
    }
}
