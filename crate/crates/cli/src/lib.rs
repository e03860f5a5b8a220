//! Configuration and stage orchestration behind the `dynrank` binary.

pub mod config;
pub mod pipeline;

pub use config::{Overrides, PipelineConfig};
pub use pipeline::{exit_code, run_pipeline, Stage, StageError, Summary};
