use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MixError> = std::result::Result<T, E>;

/// Coarse error class, used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Data,
    Fit,
    Overlap,
    Io,
    Internal,
}

#[derive(Debug, Error)]
pub enum MixError {
    #[error("covariance matrix is not positive definite: {0}")]
    PositiveDefinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("dataset is empty")]
    EmptyData,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate fit with {g} components: {reason}")]
    DegenerateFit { g: usize, reason: String },

    #[error("invalid test statistic: {0}")]
    InvalidStatistic(String),

    #[error("cannot aggregate an empty list of e-values")]
    EmptyAggregate,

    #[error("overlap needs at least two components, got {0}")]
    InsufficientComponents(usize),

    #[error(
        "overlap target {target} unreachable: achieved range [{lo:.3e}, {hi:.3e}] over scale factors tried"
    )]
    OverlapUnreachable { target: f64, lo: f64, hi: f64 },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("testing H_{g} failed: {source}")]
    AtLevel {
        g: usize,
        #[source]
        source: Box<MixError>,
    },

    #[error("scenario {id} aborted: {failures} of {replicates} replicates failed (first: {first})")]
    ScenarioFailed {
        id: String,
        failures: usize,
        replicates: usize,
        first: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl MixError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MixError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_level(g: usize, source: MixError) -> Self {
        MixError::AtLevel {
            g,
            source: Box::new(source),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            MixError::Parse { .. } | MixError::Json(_) | MixError::Csv(_) | MixError::Config(_) => {
                ErrorKind::Parse
            }
            MixError::Dimension { .. }
            | MixError::EmptyData
            | MixError::InsufficientData(_)
            | MixError::Invariant(_)
            | MixError::InvalidStatistic(_)
            | MixError::EmptyAggregate
            | MixError::InsufficientComponents(_) => ErrorKind::Data,
            MixError::PositiveDefinite(_) | MixError::DegenerateFit { .. } => ErrorKind::Fit,
            MixError::ScenarioFailed { .. } => ErrorKind::Fit,
            MixError::OverlapUnreachable { .. } => ErrorKind::Overlap,
            MixError::Io { .. } => ErrorKind::Io,
            MixError::AtLevel { source, .. } => source.kind(),
        }
    }
}
