use thiserror::Error;

/// Errors raised by inference, model updates and the experiment harness.
#[derive(Debug, Error)]
pub enum BadsError {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("covariance matrix not positive definite after jitter escalation to {jitter:e}")]
    Degenerate { jitter: f64 },

    #[error("EP failed to converge after {sweeps} sweeps (residual {residual:e})")]
    Convergence { sweeps: usize, residual: f64 },

    #[error("hyperparameter optimization failed: {0}")]
    Optimization(String),

    #[error("model evidence unavailable: {0}")]
    Evidence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BadsError>;
