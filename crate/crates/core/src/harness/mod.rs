//! Experiment harness: configuration, per-episode metrics, charts,
//! checkpoints and the user-count sweep.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod run;

pub use checkpoint::{Checkpoint, Runner};
pub use config::{ExperimentConfig, Scheme};
pub use metrics::{MetricRow, Phase};
pub use run::{
    evaluate, execute, parse_counts, run_experiment, sweep_users, RunReport, RunSummary,
    SweepReport,
};
