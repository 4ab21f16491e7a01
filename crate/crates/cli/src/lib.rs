//! Experiment configuration, run orchestration and artifact writing for the
//! `uman` command-line tool.

pub mod config;
pub mod runner;
pub mod sweep;
pub mod validate;

pub use config::ExperimentConfig;
pub use runner::{run_dir, run_experiment, RunRecord, RunStatus};
pub use sweep::{run_sweep, value_dir, SweepAxis, SweepRow};
