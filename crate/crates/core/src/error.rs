use thiserror::Error;

/// Every failure the toolkit reports.
#[derive(Debug, Error)]
pub enum JndError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("checkpoint version mismatch: file has version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("no viable configuration: no sweep cell reached success rate {floor}")]
    NoViableConfiguration { floor: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl JndError {
    /// True for errors caused by the caller's input or configuration rather than a fault.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, JndError::Numerical(_) | JndError::Json(_))
    }
}

pub type Result<T, E = JndError> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(JndError::Dimension(msg.into()))
}
