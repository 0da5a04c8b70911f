use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("degenerate row {row}: every entry is masked")]
    DegenerateRow { row: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric fault in `{name}`: non-finite value")]
    NumericFault { name: String },

    #[error("degenerate cloud: all points coincide")]
    DegenerateCloud,

    #[error("count error: requested {requested} of {available}")]
    Count { requested: usize, available: usize },

    #[error("unknown class id {0}")]
    Class(usize),

    #[error("invalid corruption spec: {0}")]
    Spec(String),

    #[error("format error in {path:?}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate reference: {0}")]
    DegenerateReference(String),

    #[error("incomplete report: {0}")]
    Completeness(String),

    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss")]
    Diverged {
        epoch: usize,
        step: usize,
        /// Parameters before the failing step.
        checkpoint: Box<crate::model::ModelParams<f32>>,
    },

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    /// Short stable tag used for one-line machine-parsable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::DegenerateRow { .. } => "degenerate-row",
            Error::Contract(_) => "contract",
            Error::NumericFault { .. } => "numeric-fault",
            Error::DegenerateCloud => "degenerate-cloud",
            Error::Count { .. } => "count",
            Error::Class(_) => "class",
            Error::Spec(_) => "spec",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::DegenerateReference(_) => "degenerate-reference",
            Error::Completeness(_) => "completeness",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
