use thiserror::Error;

/// Errors produced by samplers, kernels, the scheduler, and the I/O layer.
///
/// Variants split into two families so callers (notably the CLI) can map them
/// to exit codes: [`Error::is_validation`] covers bad inputs caught before any
/// sampling happens, everything else is a runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter was outside its domain (negative variance, b = 0, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Operands had incompatible shapes.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Bad run configuration (k = 0, r outside (0,1], unknown mode, ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A file had the wrong schema (missing column, non-numeric cell, ...).
    #[error("malformed input {path}: {detail}")]
    MalformedInput { path: String, detail: String },

    /// A matrix that must be symmetric positive definite failed its
    /// Cholesky factorization.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A draw or update produced a non-finite or out-of-range value.
    /// `iteration` is the chain iteration that failed, if known.
    #[error("numeric failure at iteration {iteration:?}: {detail}")]
    Numeric {
        detail: String,
        iteration: Option<usize>,
    },

    /// A worker thread panicked or died mid-run.
    #[error("worker {worker} failed: {detail}")]
    WorkerFailed { worker: usize, detail: String },

    /// Sample statistics too degenerate for density estimation.
    #[error("degenerate bandwidth: {0}")]
    DegenerateBandwidth(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by invalid user input rather than a failure
    /// encountered while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidConfig(_)
                | Error::MalformedInput { .. }
        )
    }

    /// Attach the failing iteration to a numeric error raised inside a
    /// kernel step that did not know it.
    pub fn at_iteration(self, iteration: usize) -> Error {
        match self {
            Error::Numeric { detail, .. } => Error::Numeric {
                detail,
                iteration: Some(iteration),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
