use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// A configuration value failed validation; `field` is its dotted path.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("missing artifact {}: run `{producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("numerical failure: {0}")]
    Numerical(ebmgeo_core::Error),

    #[error("{0}")]
    Core(ebmgeo_core::Error),

    #[error("malformed artifact {}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        PipelineError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        PipelineError::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command line.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 2,
            PipelineError::MissingArtifact { .. } => 3,
            PipelineError::Numerical(_) => 4,
            _ => 1,
        }
    }
}

impl From<ebmgeo_core::Error> for PipelineError {
    fn from(e: ebmgeo_core::Error) -> Self {
        use ebmgeo_core::Error as E;
        match e {
            E::NonFinite { .. } | E::Divergence { .. } | E::ShootingFailed { .. } | E::DegenerateCalibration { .. } => {
                PipelineError::Numerical(e)
            }
            other => PipelineError::Core(other),
        }
    }
}
