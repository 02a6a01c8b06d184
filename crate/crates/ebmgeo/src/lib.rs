//! Reproducible experiment pipeline around `ebmgeo-core`: run configuration,
//! checkpoints, CSV and SVG artifacts, a provenance manifest and the stages
//! behind the `ebmgeo` command line.

pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod pool;
pub mod svg;

pub use config::{MetricKind, RunConfig};
pub use error::{PipelineError, Result};
pub use pipeline::Run;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_ENV: &str = "EBMGEO_OUT";
