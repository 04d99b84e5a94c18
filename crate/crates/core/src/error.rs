use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (last jitter tried: {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("feature layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("empty input")]
    EmptyInput,

    #[error("actual values have zero variance")]
    ZeroVariance,

    #[error("too few points: need at least {needed}, found {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("no task passed the stacking gate; stage-2 model has no training rows")]
    NoTrainableTasks,

    #[error("missing weather covariate for region {region} in month {month}")]
    MissingCovariate { region: String, month: String },

    #[error("schema error in {file}: {message}")]
    Schema { file: String, message: String },

    #[error("join error: {0}")]
    Join(String),

    #[error("unknown or inconsistent unit: {0}")]
    Unit(String),

    #[error("overlapping billing intervals: {0}")]
    Overlap(String),

    #[error("negative interval total: {0}")]
    NegativeTotal(f64),

    #[error("invalid interval: {0}")]
    InvalidInterval(String),

    #[error("split produced an empty view: {0}")]
    EmptySplit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("task {task_id}: {source}")]
    Task {
        task_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::DimensionMismatch { .. }
            | Error::LayoutMismatch(_)
            | Error::ZeroVariance
            | Error::NoTrainableTasks => ErrorCategory::Numerical,
            Error::Config(_) | Error::Toml(_) => ErrorCategory::Config,
            Error::Task { source, .. } => source.category(),
            _ => ErrorCategory::Data,
        }
    }

    pub(crate) fn in_task(self, task_id: &str) -> Error {
        Error::Task {
            task_id: task_id.to_owned(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
