//! Experiment orchestration: procedural scenes, camera rigs, image files,
//! the cached restoration pipeline and reports.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod rig;
pub mod scene;

pub use config::ExperimentConfig;
pub use pipeline::{run_pipeline, Pipeline, RunSummary, StageError, StageId};
