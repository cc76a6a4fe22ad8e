use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration file or value failed validation.
    #[error("{file}: invalid `{field}`: {message}")]
    Config { file: String, field: String, message: String },

    #[error("device profile has no entry for module `{0}`")]
    MissingModule(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("feature width mismatch: expected {expected}, got {got}")]
    FeatureWidth { expected: usize, got: usize },

    #[error("degenerate regression design: {0}")]
    DegenerateDesign(String),

    #[error("instance too large for exhaustive search: {0} assignments")]
    TooLarge(u128),

    #[error("the tracker branch does not produce detections")]
    TrackerBranch,

    /// A runtime invariant was violated; maps to exit code 3.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn config(file: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            file: file.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 3,
            _ => 2,
        }
    }
}
