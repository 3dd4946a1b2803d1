use thiserror::Error;

pub type Result<T> = std::result::Result<T, BanditError>;

#[derive(Debug, Error)]
pub enum BanditError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch { what: &'static str, expected: usize, actual: usize },

    #[error("arm {arm} out of range for {arms} arms")]
    ArmOutOfRange { arm: usize, arms: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("particle degeneracy at t={t}: every particle assigns negligible likelihood to the observation")]
    Degenerate { t: u64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error at line {line}: {message}")]
    Validation { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn ensure_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(BanditError::DimensionMismatch { what, expected, actual });
    }
    Ok(())
}
