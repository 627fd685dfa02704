use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::CityRegistry;
use crate::text::{EncodeConfig, Lexicon};

/// Which non-text rows of the fused feature matrix are attended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Features {
    /// Description, profile location, name, language and time zone rows.
    pub metadata: bool,
    pub network: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features {
            metadata: true,
            network: true,
        }
    }
}

impl Features {
    pub const TEXT: Features = Features {
        metadata: false,
        network: false,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Word-embedding width `D`; every hidden representation is `2D` wide.
    pub word_dim: usize,
    pub char_dim: usize,
    pub filter_sizes: Vec<usize>,
    pub filters_per_size: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub lambda_init: f64,
    /// Weight of the country cross entropy.
    pub alpha: f64,
    /// Keeps the learned penalty scale non-negative after each update.
    pub clamp_lambda: bool,
    pub max_tweets: usize,
    pub max_tokens: usize,
    pub max_chars: usize,
    pub dropout_lstm_input: f64,
    pub dropout_encoder: f64,
    pub layer_norm_eps: f64,
    pub use_char_cnn: bool,
    pub use_word_attention: bool,
    pub use_field_attention: bool,
    pub use_encoders: bool,
    pub use_country_supervision: bool,
    pub features: Features,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 300,
            char_dim: 50,
            filter_sizes: vec![3, 4, 5],
            filters_per_size: 100,
            heads: 10,
            layers: 3,
            ffn_dim: 2400,
            lambda_init: 1.0,
            alpha: 1.0,
            clamp_lambda: false,
            max_tweets: 100,
            max_tokens: 30,
            max_chars: 20,
            dropout_lstm_input: 0.3,
            dropout_encoder: 0.1,
            layer_norm_eps: 1e-6,
            use_char_cnn: true,
            use_word_attention: true,
            use_field_attention: true,
            use_encoders: true,
            use_country_supervision: true,
            features: Features::default(),
        }
    }
}

impl ModelConfig {
    pub fn hidden(&self) -> usize {
        2 * self.word_dim
    }

    /// Country-loss weight actually applied.
    pub fn effective_alpha(&self) -> f64 {
        if self.use_country_supervision {
            self.alpha
        } else {
            0.0
        }
    }

    pub fn encode_config(&self) -> EncodeConfig {
        EncodeConfig {
            n_max: self.max_tokens,
            k_max: self.max_chars,
            t_max: self.max_tweets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.word_dim == 0 || self.char_dim == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return fail("dimensions and head count must be positive".into());
        }
        if self.hidden() % self.heads != 0 {
            return fail(format!("2D = {} is not divisible by {} heads", self.hidden(), self.heads));
        }
        if self.use_char_cnn {
            let total = self.filter_sizes.len() * self.filters_per_size;
            if total != self.word_dim {
                return fail(format!(
                    "char-CNN yields {} features ({} sizes × {}), word_dim is {}",
                    total,
                    self.filter_sizes.len(),
                    self.filters_per_size,
                    self.word_dim
                ));
            }
            if self.filter_sizes.contains(&0) {
                return fail("filter sizes must be positive".into());
            }
            let widest = self.filter_sizes.iter().copied().max().unwrap_or(0);
            if widest > self.max_chars {
                return fail(format!("filter width {widest} exceeds max_chars {}", self.max_chars));
            }
        }
        for (name, p) in [
            ("dropout_lstm_input", self.dropout_lstm_input),
            ("dropout_encoder", self.dropout_encoder),
        ] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} = {p} is not in [0, 1)"));
            }
        }
        if self.max_tokens == 0 || self.max_chars == 0 {
            return fail("max_tokens and max_chars must be positive".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha = {} must be finite and non-negative", self.alpha));
        }
        if !(self.layer_norm_eps > 0.0) {
            return fail("layer_norm_eps must be positive".into());
        }
        Ok(())
    }
}

/// Table sizes fixed by the data rather than the hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub words: usize,
    pub chars: usize,
    pub languages: usize,
    pub time_zones: usize,
    pub countries: usize,
    pub cities: usize,
}

impl ModelDims {
    pub fn from_data(lexicon: &Lexicon, registry: &CityRegistry) -> ModelDims {
        ModelDims {
            words: lexicon.vocab.num_words(),
            chars: lexicon.vocab.num_chars(),
            languages: lexicon.languages.len(),
            time_zones: lexicon.time_zones.len(),
            countries: registry.num_countries(),
            cities: registry.num_cities(),
        }
    }
}
