//! Experiment plumbing: configuration, checkpoints, the training loop and
//! the pipeline commands behind the CLI.

mod checkpoint;
mod commands;
mod config;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, fnv1a64, load_checkpoint, save_checkpoint, MAGIC};
pub use commands::*;
pub use config::{DataSource, ExperimentConfig, DEFAULT_PRUNE_RATIO, DEFAULT_SWEEP_RATIOS};
pub use train::{jsv_probe, train, RunLog, RunRow, TrainOptions, RUN_LOG_HEADER};
