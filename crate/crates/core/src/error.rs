use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible distribution parameters: {0}")]
    InfeasibleDistribution(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("solver did not converge after {iterations} iterations (best objective {best_objective})")]
    NotConverged { iterations: usize, best_objective: f64 },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("ambiguity set is not realizable: {0}")]
    Unrealizable(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize, trace: Vec<crate::nn::TraceRow> },

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
