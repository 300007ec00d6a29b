use thiserror::Error;

/// Error taxonomy shared by every module in the crate.
///
/// `Config` maps to the config-error exit path, `Pairing` to the pairing-error
/// exit path; the rest surface as ordinary failures with context strings.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or length mismatch between operands.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value outside the mathematical domain of the operation
    /// (non-finite input, empty vector, out-of-range parameter).
    #[error("domain: {0}")]
    Domain(String),

    /// A caller-side precondition was violated (e.g. a matrix that must be
    /// row-stochastic is not).
    #[error("contract violated: {0}")]
    Contract(String),

    /// Input is technically valid but statistically unusable
    /// (e.g. a zero-norm vector where a direction is required).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Paired samples whose identifiers do not line up.
    #[error("pairing violation: {0}")]
    Pairing(String),

    /// Invalid model or intervention configuration.
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
    pub fn pairing(msg: impl Into<String>) -> Self {
        Error::Pairing(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
