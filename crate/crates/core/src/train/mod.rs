//! Training loop, plateau learning-rate schedule, checkpoints and the
//! ablation / country-weight experiment drivers.

mod checkpoint;
mod config;
mod data;
mod experiments;
mod runner;
mod schedule;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::TrainConfig;
pub use data::{make_batches, prepare_samples};
pub use experiments::{
    run_ablation, run_alpha_sweep, run_once, sweep_mean, write_sweep_csv, AblationRow, Corpus, RunSummary, SweepRow,
    Variant,
};
pub use runner::{
    evaluate_samples, predict_samples, train, EpochRecord, RunRecord, Trained, BATCH_STREAM, DROPOUT_STREAM,
    INIT_STREAM,
};
pub use schedule::{PlateauSchedule, Step};
