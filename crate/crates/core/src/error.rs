use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} index {index} out of range (extent {extent})")]
    Bounds {
        what: String,
        index: usize,
        extent: usize,
    },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid {field}: {msg}")]
    Invalid { field: &'static str, msg: String },

    #[error("format error in {path}: field `{field}`: {msg}")]
    Format {
        path: PathBuf,
        field: String,
        msg: String,
    },

    #[error("label has no foreground voxels")]
    NoTarget,

    #[error("weights sum to zero")]
    DegenerateWeights,

    #[error("registration failed at slice {slice:?} after {iterations} iterations: {msg}")]
    Registration {
        slice: Option<usize>,
        iterations: usize,
        msg: String,
    },

    #[error("external registration command failed: {0}")]
    ExternalCommand(String),

    #[error("non-finite loss at iter {iter} (alpha={alpha}, lambda={lambda}, lr={lr}, patches={patches})")]
    NonFiniteLoss {
        iter: usize,
        alpha: f64,
        lambda: f64,
        lr: f64,
        patches: String,
    },

    #[error("metric `{0}` undefined for an empty mask")]
    UndefinedMetric(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Bounds { .. } => "bounds",
            Error::ShapeMismatch { .. } => "shape",
            Error::Invalid { .. } => "invalid",
            Error::Format { .. } => "format",
            Error::NoTarget => "no_target",
            Error::DegenerateWeights => "degenerate_weights",
            Error::Registration { .. } => "registration",
            Error::ExternalCommand(_) => "external_command",
            Error::NonFiniteLoss { .. } => "nan_abort",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(field: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            msg: msg.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            field: field.into(),
            msg: msg.into(),
        }
    }
}
