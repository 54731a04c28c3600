use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the scoring, simulation, dataset and model stages.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration value is out of its admissible range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A checkpoint could not be decoded or does not match the expected layout.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Upstream artifact does not match the provenance recorded downstream.
    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Wraps an error with the trial it came from.
    #[error("trial {trial}: {source}")]
    Trial {
        trial: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_trial(self, trial: &str) -> Self {
        Error::Trial {
            trial: trial.to_string(),
            source: Box::new(self),
        }
    }

    /// True for failures caused by bad data rather than bad usage.
    pub fn is_domain(&self) -> bool {
        match self {
            Error::Input(_) | Error::Checkpoint(_) | Error::Provenance(_) => true,
            Error::Csv { .. } | Error::Json { .. } => true,
            Error::Config(_) | Error::Io { .. } => false,
            Error::Trial { source, .. } => source.is_domain(),
        }
    }
}
