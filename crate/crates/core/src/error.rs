use thiserror::Error;

/// Errors raised by the decoding library.
///
/// Variants are grouped by the exit-code family they map to in the CLI:
/// configuration problems, malformed or misaligned data, and numeric
/// failures inside the estimators.
#[derive(Debug, Error)]
pub enum AadError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular matrix in {context} (condition estimate {condition:.3e})")]
    Singular { context: &'static str, condition: f64 },

    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("degenerate noise model: {0}")]
    DegenerateNoise(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("model is not calibrated; run platt_fit first")]
    Uncalibrated,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, AadError>;

impl AadError {
    /// Stable process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            AadError::Config(_) => 2,
            AadError::InvalidInput(_)
            | AadError::Unsupported(_)
            | AadError::Dimension(_)
            | AadError::Io(_)
            | AadError::Format(_) => 3,
            AadError::Singular { .. }
            | AadError::NotPsd(_)
            | AadError::DegenerateNoise(_)
            | AadError::NoConvergence { .. }
            | AadError::Uncalibrated => 4,
        }
    }
}
