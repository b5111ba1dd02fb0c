//! Reproducible runs: configuration, training loops, tuners, metrics and
//! checkpoints, plus one entry point per CLI subcommand.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod metrics;
pub mod parallel;
pub mod train;
pub mod tune;

pub use checkpoint::{Checkpoint, CheckpointKind};
pub use commands::{FoldSource, RunOutput};
pub use config::{RunConfig, TunerKind};
pub use metrics::{MetricsLog, MetricsRecord};
pub use parallel::run_parallel;
pub use tune::{tune, Target, TuneResult, TunerSpec};
