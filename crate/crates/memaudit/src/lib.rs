//! Batch front end for shadow-fleet privacy audits: binary artifact
//! formats, experiment configuration, the staged pipeline and reports.

pub mod config;
pub mod error;
pub mod format;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use pipeline::Run;
