use sinklab_core::Error as CoreError;

/// Harness-level failure classes. Each maps onto a process exit code so
/// scripts can react to gate failures without parsing stderr.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("sanity gate: {0}")]
    Sanity(String),
    #[error("verification gate: {0}")]
    Verification(String),
    #[error("pairing: {0}")]
    Pairing(String),
    #[error("runtime: {0}")]
    Runtime(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub fn sanity(msg: impl Into<String>) -> Self {
        HarnessError::Sanity(msg.into())
    }

    pub fn verification(msg: impl Into<String>) -> Self {
        HarnessError::Verification(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        HarnessError::Runtime(msg.into())
    }

    /// 0 success, 2 config, 3 sanity gate, 4 verification gate, 5 pairing;
    /// anything else is 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Sanity(_) => 3,
            HarnessError::Verification(_) => 4,
            HarnessError::Pairing(_) => 5,
            _ => 1,
        }
    }
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(m) => HarnessError::Config(m),
            CoreError::Pairing(m) => HarnessError::Pairing(m),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
