use std::path::PathBuf;

use thiserror::Error;

use crate::qp::QpStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("sampling interval must be positive, got {0}")]
    NonPositiveDt(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("QP solver did not reach a solution (status {status:?}, {iterations} iterations, primal {primal:.3e}, dual {dual:.3e})")]
    SolverFailed {
        status: QpStatus,
        iterations: usize,
        primal: f64,
        dual: f64,
    },

    #[error("{failed} of {batch} samples in a batch failed to solve")]
    FailureBudget { failed: usize, batch: usize },

    #[error("weakly active constraints at rows {rows:?}; gradient unreliable")]
    DegenerateActiveSet { rows: Vec<usize> },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),

    #[error("malformed name `{0}`")]
    MalformedName(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad magic or version in {}", .0.display())]
    BadMagic(PathBuf),

    #[error("episode is over")]
    EpisodeOver,

    #[error("openings never settled")]
    NeverSettled,

    #[error("unknown {kind} `{name}`")]
    UnknownStrategy { kind: &'static str, name: String },

    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn csv(e: csv::Error) -> Self {
        Error::io("<csv>", std::io::Error::other(e))
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn check_finite<V: std::borrow::Borrow<f64>>(
    what: &'static str,
    values: impl IntoIterator<Item = V>,
) -> Result<()> {
    if values.into_iter().all(|v| v.borrow().is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
