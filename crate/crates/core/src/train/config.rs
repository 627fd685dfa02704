use hlpnn_tensor::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_reduced: f64,
    pub extra_epochs_after_reduction: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Dev evaluation period in epochs. The last epoch is always evaluated.
    pub eval_every: usize,
    /// Gradients are clipped elementwise to `[-clip, clip]`.
    pub clip: f64,
    pub adam: AdamConfig,
    /// Tweet cap for dev/test users; `None` reuses the model's training cap.
    pub eval_max_tweets: Option<usize>,
    /// Workers used for evaluation. Training itself is single-threaded.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr_initial: 1e-4,
            lr_reduced: 1e-5,
            extra_epochs_after_reduction: 3,
            max_epochs: 10,
            seed: 0,
            eval_every: 1,
            clip: 1.0,
            adam: AdamConfig::default(),
            eval_max_tweets: None,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1");
        }
        if !(self.lr_initial > 0.0 && self.lr_reduced > 0.0) {
            return fail("learning rates must be positive");
        }
        if self.lr_reduced >= self.lr_initial {
            return fail("lr_reduced must be below lr_initial");
        }
        if !(self.clip > 0.0) {
            return fail("clip must be positive");
        }
        if self.threads == 0 {
            return fail("threads must be at least 1");
        }
        Ok(())
    }
}
