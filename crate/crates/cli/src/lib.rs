//! Experiment orchestration for `epl`: configuration, the C1/C2/C3
//! experiment designs, SVG scatterplots, correlation reports and run
//! manifests.

pub mod config;
pub mod error;
pub mod experiment;
pub mod files;
pub mod manifest;
pub mod report;
pub mod scatter;

pub use error::{CliError, Result};
