use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{which} evaluation produced a non-finite value at x = {x:?}, params = {params:?}")]
    Evaluation { which: &'static str, x: Vec<f64>, params: Vec<f64> },

    #[error("path exploded at step {step}")]
    Explosion { step: usize },

    #[error("diffusion matrix is singular or ill-conditioned at observation {index}")]
    SingularDiffusion { index: usize },

    #[error("series is degenerate (zero sample variance)")]
    DegenerateSeries,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tuning failed: every candidate fit was rejected ({evaluations} evaluations)")]
    TuningFailed { evaluations: usize },

    #[error("too many failed replicates: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
