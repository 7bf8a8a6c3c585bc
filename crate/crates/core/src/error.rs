use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the inference toolkit.
///
/// Variants are split between input validation (bad shapes, bad
/// configuration, missing files) and runtime failures (non-convergence,
/// numerical breakdown). The CLI maps the first group to exit code 1 and
/// the second to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("weights must sum to 1, got {sum}")]
    WeightSum { sum: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("sinkhorn normalization did not converge within {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("graph is not connected")]
    Disconnected,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("effective sample size {ess:.2} below threshold {threshold}")]
    WeightDegeneracy { ess: f64, threshold: f64 },

    #[error("class exhausted: requested {requested} {class} points, only {available} available")]
    ClassExhausted {
        class: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("round {round}, agent {agent}: {source}")]
    Agent {
        round: usize,
        agent: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
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

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from bad input rather than a failure
    /// during computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::DimensionMismatch { .. }
            | Error::WeightSum { .. }
            | Error::InvalidArgument(_)
            | Error::NegativeEntry { .. }
            | Error::Disconnected
            | Error::Empty(_)
            | Error::ClassExhausted { .. }
            | Error::Parse { .. }
            | Error::MissingFile(_)
            | Error::Config(_)
            | Error::Json(_) => true,
            Error::Agent { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
