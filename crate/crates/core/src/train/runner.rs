use std::io::{BufRead, Write};
use std::time::Instant;

use hlpnn_tensor::{adam_step, clip_gradients, AdamState, ParamStore, Rng, Tape, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::make_batches;
use super::schedule::{PlateauSchedule, Step};
use crate::error::{Error, Result};
use crate::geo::{evaluate, BiasMatrix, CityRegistry, Gold, MetricsReport};
use crate::model::{Hlpnn, ModelConfig, ModelDims, Sample};

/// RNG streams derived from the run seed.
pub const INIT_STREAM: u64 = 1;
pub const BATCH_STREAM: u64 = 2;
pub const DROPOUT_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub city_loss: f64,
    pub country_loss: f64,
    pub step_losses: Vec<f64>,
    pub dev: Option<MetricsReport>,
    pub lambda: f64,
    pub improved: bool,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
}

impl RunRecord {
    /// One JSON object per epoch.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<RunRecord> {
        let mut epochs = Vec::new();
        for line in r.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                epochs.push(serde_json::from_str(&line)?);
            }
        }
        Ok(RunRecord { epochs })
    }

    pub fn step_losses(&self) -> Vec<f64> {
        self.epochs.iter().flat_map(|e| e.step_losses.iter().copied()).collect()
    }

    pub fn lr_reductions(&self) -> usize {
        self.epochs.windows(2).filter(|w| w[1].lr < w[0].lr).count()
    }
}

pub struct Trained {
    pub model: Hlpnn,
    /// Parameters of the best dev epoch (the last epoch without dev data).
    pub store: ParamStore,
    pub record: RunRecord,
    pub best_epoch: usize,
}

/// Trains a fresh model on `train`, selecting on `dev`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    dims: ModelDims,
    registry: &CityRegistry,
    bias: &BiasMatrix,
    train: &[Sample],
    dev: &[Sample],
    word_table: Option<Tensor>,
) -> Result<Trained> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let root = Rng::seed_from(cfg.seed);
    let (model, mut store) = Hlpnn::create(model_cfg.clone(), dims, bias, &mut root.derive(INIT_STREAM), word_table)?;
    let mut batch_rng = root.derive(BATCH_STREAM);
    let mut dropout_rng = root.derive(DROPOUT_STREAM);
    let mut adam = AdamState::new(&store, cfg.adam);
    let mut schedule =
        PlateauSchedule::new(cfg.lr_initial, cfg.lr_reduced, cfg.extra_epochs_after_reduction, cfg.max_epochs);
    let mut record = RunRecord::default();
    let mut best = (store.clone(), 0);

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let lr = schedule.lr();
        let mut step_losses = Vec::new();
        let (mut city_sum, mut country_sum, mut seen) = (0.0, 0.0, 0usize);
        for idx in make_batches(train, cfg.batch_size, &mut batch_rng) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let (total, city, country, grads) = {
                let mut tape = Tape::with_params(&store);
                tape.set_training(true);
                let fwd = model.forward(&mut tape, &batch, &mut dropout_rng)?;
                let loss = model.loss(&mut tape, &fwd, &batch)?;
                let grads = tape.backward(loss.total)?;
                (tape.scalar(loss.total), tape.scalar(loss.city), tape.scalar(loss.country), grads)
            };
            if !total.is_finite() {
                return Err(Error::Config(format!("non-finite loss at epoch {epoch}")));
            }
            store.accumulate(&grads);
            clip_gradients(&mut store, -cfg.clip, cfg.clip)?;
            adam_step(&mut store, &mut adam, lr)?;
            model.project(&mut store);
            store.zero_grad();
            step_losses.push(total);
            city_sum += city * batch.len() as f64;
            country_sum += country * batch.len() as f64;
            seen += batch.len();
        }
        let evaluated = !dev.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs);
        let report = if evaluated {
            Some(evaluate_samples(&model, &store, dev, registry, cfg.batch_size, cfg.threads)?.0)
        } else {
            None
        };
        let (improved, step) = schedule.end_epoch(report.as_ref().map(|r| r.accuracy));
        if improved || dev.is_empty() {
            best = (store.clone(), epoch);
        }
        let n = seen as f64;
        let alpha = model_cfg.effective_alpha();
        let e = EpochRecord {
            epoch,
            lr,
            train_loss: (city_sum + alpha * country_sum) / n,
            city_loss: city_sum / n,
            country_loss: country_sum / n,
            step_losses,
            dev: report,
            lambda: model.lambda(&store),
            improved,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} lr {lr:e} dev acc {} λ {:.4}",
            e.train_loss,
            e.dev.as_ref().map_or("-".into(), |r| format!("{:.4}", r.accuracy)),
            e.lambda
        );
        record.epochs.push(e);
        if step == Step::Stop {
            break;
        }
    }
    let (store, best_epoch) = best;
    Ok(Trained {
        model,
        store,
        record,
        best_epoch,
    })
}

/// Predicted city per sample. Batches are fixed by `batch_size`, so results
/// do not depend on `threads`.
pub fn predict_samples(
    model: &Hlpnn,
    store: &ParamStore,
    samples: &[Sample],
    batch_size: usize,
    threads: usize,
) -> Result<Vec<usize>> {
    let chunks: Vec<&[Sample]> = samples.chunks(batch_size.max(1)).collect();
    let one = |c: &&[Sample]| -> Result<Vec<usize>> { model.predict(store, &c.iter().collect::<Vec<_>>()) };
    let parts = if threads <= 1 {
        chunks.iter().map(one).collect::<Result<Vec<_>>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| chunks.par_iter().map(one).collect::<Result<Vec<_>>>())?
    };
    Ok(parts.concat())
}

pub fn evaluate_samples(
    model: &Hlpnn,
    store: &ParamStore,
    samples: &[Sample],
    registry: &CityRegistry,
    batch_size: usize,
    threads: usize,
) -> Result<(MetricsReport, Vec<usize>)> {
    let preds = predict_samples(model, store, samples, batch_size, threads)?;
    let golds: Vec<Gold> = samples.iter().map(Sample::gold).collect();
    Ok((evaluate(&preds, &golds, registry)?, preds))
}
