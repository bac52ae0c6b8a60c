use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
///
/// Numerical failures carry the operation that raised them so drivers can
/// report `module::op` without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("rank deficiency at column {column} (pivot {pivot:.3e} relative to original norm)")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("singular matrix in {op}")]
    Singular { op: &'static str },

    #[error("coefficient is not coercive: min a(x; y) = {min_value:.3e} at element {element}")]
    Coercivity { min_value: f64, element: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ill-conditioned observation: sensors {first} and {second} are nearly dependent (|<w_i, w_j>| = {overlap:.6})")]
    Conditioning {
        first: usize,
        second: usize,
        overlap: f64,
    },

    #[error("unstable reconstruction: beta = {beta:.3e}")]
    Unstable { beta: f64 },

    #[error("refused: {0}")]
    Refused(String),

    #[error("refinement starvation in cell at level {level}: {local_points} training point(s) inside the box; use a denser training grid")]
    RefinementStarvation { level: usize, local_points: usize },

    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{op}: {source}")]
    Context {
        op: String,
        #[source]
        source: Box<Error>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the operation that failed.
    pub fn context(self, op: impl Into<String>) -> Self {
        Error::Context {
            op: op.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad configuration rather than by numerics.
    pub fn is_schema(&self) -> bool {
        if let Error::Context { source, .. } = self {
            return source.is_schema();
        }
        matches!(
            self,
            Error::Schema { .. } | Error::InvalidInput(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
