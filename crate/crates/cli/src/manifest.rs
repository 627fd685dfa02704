use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hlpnn_core::graph::{GraphMode, LineConfig, CELEBRITY_THRESHOLD};
use hlpnn_core::model::ModelConfig;
use hlpnn_core::synth::WorldSpec;
use hlpnn_core::text::{DEFAULT_CHAR_MIN_COUNT, DEFAULT_WORD_MIN_COUNT};
use hlpnn_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSettings {
    pub word_min_count: u64,
    pub char_min_count: u64,
}

impl Default for VocabSettings {
    fn default() -> Self {
        VocabSettings {
            word_min_count: DEFAULT_WORD_MIN_COUNT,
            char_min_count: DEFAULT_CHAR_MIN_COUNT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSettings {
    pub mode: GraphMode,
    pub celebrity_threshold: usize,
}

impl Default for GraphSettings {
    fn default() -> Self {
        GraphSettings {
            mode: GraphMode::Wnut,
            celebrity_threshold: CELEBRITY_THRESHOLD,
        }
    }
}

/// Input locations. Relative paths are resolved against the working directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
}

/// The configuration document accepted by `--config`. Every section is
/// optional and defaults to the reference hyperparameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunManifest {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub line: LineConfig,
    pub world: WorldSpec,
    pub vocab: VocabSettings,
    pub graph: GraphSettings,
    pub paths: Paths,
    pub seed: Option<u64>,
    pub version: Option<String>,
}

impl RunManifest {
    pub fn load(path: Option<&Path>) -> Result<RunManifest> {
        let Some(path) = path else {
            return Ok(RunManifest::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies the command-line seed and thread count and records the tool
    /// version. The seed falls back to the document's, then to 0.
    pub fn resolve(mut self, seed: Option<u64>, threads: Option<usize>) -> RunManifest {
        let seed = seed.or(self.seed).unwrap_or(0);
        self.seed = Some(seed);
        self.train.seed = seed;
        self.line.seed = seed;
        self.world.seed = seed;
        if let Some(t) = threads {
            self.train.threads = t;
            self.line.threads = t;
        }
        self.version = Some(env!("CARGO_PKG_VERSION").to_string());
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_hyperparameters() {
        let m = RunManifest::default();
        assert_eq!(
            (m.model.word_dim, m.model.char_dim, m.model.filter_sizes.clone(), m.model.filters_per_size),
            (300, 50, vec![3, 4, 5], 100)
        );
        assert_eq!((m.model.heads, m.model.layers, m.model.ffn_dim), (10, 3, 2400));
        assert_eq!((m.model.lambda_init, m.model.alpha), (1.0, 1.0));
        assert_eq!((m.train.batch_size, m.train.lr_initial), (32, 1e-4));
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for doc in [r#"{"bogus": 1}"#, r#"{"model": {"bogus": 1}}"#, r#"{"paths": {"trian": "x"}}"#] {
            assert!(serde_json::from_str::<RunManifest>(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn flags_override_the_document() {
        let m: RunManifest = serde_json::from_str(r#"{"seed": 4, "train": {"threads": 3}}"#).unwrap();
        let r = m.clone().resolve(None, None);
        assert_eq!((r.train.seed, r.line.seed, r.world.seed, r.train.threads), (4, 4, 4, 3));
        let r = m.resolve(Some(9), Some(1));
        assert_eq!((r.seed(), r.train.threads, r.line.threads), (9, 1, 1));
        assert!(r.version.is_some());
    }
}
