//! File formats and the command-line tool around `reflectnet-core`: PNG/PPM
//! images, dataset sidecars, checkpoints, the TOML run configuration and the
//! evaluation report.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod imageio;
pub mod losslog;
pub mod report;
pub mod sidecar;

pub use error::{CliError, Result};
