use std::fmt;
use std::io::Write;
use std::str::FromStr;

use hlpnn_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::runner::{evaluate_samples, train, RunRecord};
use crate::error::{Error, Result};
use crate::geo::{build_bias, CityRegistry, MetricsReport};
use crate::model::{ModelConfig, ModelDims, Sample};
use crate::text::Lexicon;

/// Encoded splits shared by every run of an experiment.
pub struct Corpus {
    pub lexicon: Lexicon,
    pub registry: CityRegistry,
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
    pub word_table: Option<Tensor>,
}

impl Corpus {
    pub fn dims(&self) -> ModelDims {
        ModelDims::from_data(&self.lexicon, &self.registry)
    }
}

/// Result of one training run, evaluated on dev and test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub dev: MetricsReport,
    pub test: MetricsReport,
    pub record: RunRecord,
}

pub fn run_once(model_cfg: &ModelConfig, train_cfg: &TrainConfig, corpus: &Corpus, seed: u64) -> Result<RunSummary> {
    let cfg = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let bias = build_bias(&corpus.registry);
    let t = train(
        model_cfg,
        &cfg,
        corpus.dims(),
        &corpus.registry,
        &bias,
        &corpus.train,
        &corpus.dev,
        corpus.word_table.clone(),
    )?;
    let eval = |s: &[Sample]| evaluate_samples(&t.model, &t.store, s, &corpus.registry, cfg.batch_size, cfg.threads);
    Ok(RunSummary {
        seed,
        best_epoch: t.best_epoch,
        dev: eval(&corpus.dev)?.0,
        test: eval(&corpus.test)?.0,
        record: t.record,
    })
}

/// One component removed relative to the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoCharCnn,
    NoWordAttention,
    NoFieldAttention,
    NoEncoders,
    NoCountry,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoCharCnn,
        Variant::NoWordAttention,
        Variant::NoFieldAttention,
        Variant::NoEncoders,
        Variant::NoCountry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCharCnn => "no-char-cnn",
            Variant::NoWordAttention => "no-word-attention",
            Variant::NoFieldAttention => "no-field-attention",
            Variant::NoEncoders => "no-encoders",
            Variant::NoCountry => "no-country",
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoCharCnn => c.use_char_cnn = false,
            Variant::NoWordAttention => c.use_word_attention = false,
            Variant::NoFieldAttention => c.use_field_attention = false,
            Variant::NoEncoders => c.use_encoders = false,
            Variant::NoCountry => c.use_country_supervision = false,
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    #[serde(flatten)]
    pub run: RunSummary,
}

/// Trains every variant on every seed.
pub fn run_ablation(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    corpus: &Corpus,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &variant in variants {
        let cfg = variant.apply(base);
        for &seed in seeds {
            log::info!("ablation {variant} seed {seed}");
            rows.push(AblationRow {
                variant,
                run: run_once(&cfg, train_cfg, corpus, seed)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub seed: u64,
    /// Relative country error on the test split.
    pub rce: f64,
    pub accuracy: f64,
}

/// Trains one model per `(alpha, seed)` and scores it on the test split.
pub fn run_alpha_sweep(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    corpus: &Corpus,
    alphas: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &alpha in alphas {
        let cfg = ModelConfig {
            alpha,
            use_country_supervision: true,
            ..base.clone()
        };
        for &seed in seeds {
            log::info!("alpha {alpha} seed {seed}");
            let run = run_once(&cfg, train_cfg, corpus, seed)?;
            rows.push(SweepRow {
                alpha,
                seed,
                rce: run.test.relative_country_error,
                accuracy: run.test.accuracy,
            });
        }
    }
    Ok(rows)
}

/// Header `alpha,seed,rce,accuracy`, one row per run.
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "alpha,seed,rce,accuracy")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.alpha, r.seed, r.rce, r.accuracy)?;
    }
    Ok(())
}

/// Mean of `field` over the rows with the given `alpha`.
pub fn sweep_mean(rows: &[SweepRow], alpha: f64, field: impl Fn(&SweepRow) -> f64) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| r.alpha == alpha).map(field).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
