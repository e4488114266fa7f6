use thiserror::Error;

use crate::sim::SimError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("edge ({u}, {v}) out of range for {n} vertices (edge #{index})")]
    EdgeOutOfRange {
        index: usize,
        u: usize,
        v: usize,
        n: usize,
    },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("process grid constraint violated: {0}")]
    Grid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid label {label} at row {row} (expected < {classes})")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("training mask selects no vertices")]
    EmptyMask,

    #[error("backward called before forward")]
    NoForwardCache,

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Sim(#[from] SimError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable discriminant used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EdgeOutOfRange { .. } => "edge_out_of_range",
            Error::InvalidPartition(_) => "invalid_partition",
            Error::Grid(_) => "grid_constraint",
            Error::Config(_) => "config",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::EmptyMask => "empty_mask",
            Error::NoForwardCache => "no_forward_cache",
            Error::Parse { .. } => "parse",
            Error::Sim(SimError::Grid(_)) => "grid_constraint",
            Error::Sim(_) => "simulation",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
