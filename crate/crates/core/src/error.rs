use thiserror::Error;

/// Errors raised across the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular matrix (pivot {pivot:.3e} below threshold {threshold:.3e} at column {column})")]
    SingularMatrix {
        column: usize,
        pivot: f64,
        threshold: f64,
    },
    #[error("singular residual Jacobian: {0}")]
    SingularJacobian(String),
    #[error("Newton iteration did not converge after {iterations} iterations (last step {last_step:.3e})")]
    NoConvergence { iterations: usize, last_step: f64 },
    #[error("solver failed at step {step}: {source}")]
    StepFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("singular algebraic block, cannot build a consistent initial state")]
    SingularAlgebraicBlock,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("training failed at epoch {epoch}, batch {batch}: {source}")]
    SolverFailure {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
