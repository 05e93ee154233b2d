//! Files, configuration, stage orchestration and the command line for
//! `warpfit-core`.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod simulate;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use pipeline::{Manifest, Pipeline, RunReport, STAGES};
