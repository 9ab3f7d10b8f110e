//! Experiment runner for the precise large deviation laboratory: config
//! parsing, a rayon executor, the four experiment kinds and deterministic
//! CSV/JSON reports.

pub mod catalog;
pub mod config;
pub mod pool;
pub mod report;
pub mod runner;

pub use config::{ConfigError, ExperimentConfig, Kind};
pub use ldlab_core as core;
pub use pool::Pool;
pub use report::{ReportBundle, Status};
pub use runner::run;
