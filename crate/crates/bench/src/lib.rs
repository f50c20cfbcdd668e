//! Benchmark harness: configuration, stage orchestration, analysis and
//! reporting on top of `coi_core`.

pub mod analysis;
pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod questions;
pub mod report;

pub use analysis::{analyze, Analysis, Metric};
pub use config::ExperimentConfig;
pub use pipeline::{run_experiment, ExperimentReport, FailureRecord, ItemRecord, Workspace};
pub use questions::load_questions;
