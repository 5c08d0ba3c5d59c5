use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The spectral measure violates Dalang's integrability condition, or a
    /// quantity was requested at a point where it is infinite.
    #[error("divergent: {0}")]
    Divergent(String),

    #[error("negative spectral weight {value} at frequency index {index}")]
    NegativeDensity { index: usize, value: f64 },

    #[error("{failed} of {total} paths became unstable (limit is 0.1%)")]
    Unstable { failed: usize, total: usize },

    #[error("degenerate diffusion coefficient: {0}")]
    Degenerate(String),

    #[error("derivative tensor too large: {0}")]
    TooLarge(String),

    #[error("configuration rejected:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
