use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A non-finite value appeared while iterating a model or plant.
    #[error("numeric divergence at step {step}: {detail}")]
    NumericDivergence { step: usize, detail: String },

    #[error("no convergence after {iterations} iterations (best estimate {best_estimate}, residual {residual:e})")]
    ConvergenceFailure {
        iterations: usize,
        best_estimate: f64,
        residual: f64,
    },

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("FIT undefined: {0}")]
    UndefinedFit(String),

    #[error("non-finite gradient for parameter {parameter}")]
    NonFiniteGradient { parameter: String },

    /// Training gave up; the history up to the failure is kept so it can still be written.
    #[error("training failed after {} epochs: {reason}", history.records.len())]
    TrainingFailure {
        reason: String,
        history: Box<crate::training::TrainHistory>,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
