use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A standing hypothesis of the model is violated; `label` is e.g. `H3`.
    #[error("hypothesis ({label}) violated: {reason}")]
    Hypothesis { label: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite state at t = {t}: {detail}")]
    NonFinite { t: f64, detail: String },

    #[error("Jacobian at t = {t} is numerically singular (condition number {cond:.3e})")]
    Singular { t: f64, cond: f64 },

    #[error("time {t} is not a node of the grid")]
    OffGrid { t: f64 },

    #[error("rejection sampler exceeded {0} proposals")]
    RejectionStalled(u64),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
