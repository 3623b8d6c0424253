use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum SmsError {
    /// Mismatched dimensions, invalid parameter layouts, bad scenario overrides.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values or other bad numeric input.
    #[error("input error: {0}")]
    Input(String),

    /// The requested operation is not supported by the given family/operator.
    #[error("capability error: {0}")]
    Capability(String),

    /// Overflow, underflow, NaN produced during computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Adaptive step size underflowed; the system is too stiff for the configured scheme.
    #[error("stiffness failure at t = {t}: {detail}")]
    Stiffness { t: f64, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SmsError>;

impl SmsError {
    pub fn config(msg: impl Into<String>) -> Self {
        SmsError::Config(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        SmsError::Input(msg.into())
    }
    pub fn capability(msg: impl Into<String>) -> Self {
        SmsError::Capability(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        SmsError::Numeric(msg.into())
    }
}
