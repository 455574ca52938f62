use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge after {subdivisions} subdivisions (estimate {value:e}, error {err:e})")]
    NonConvergence {
        subdivisions: usize,
        value: f64,
        err: f64,
    },

    #[error("envelope error: {0}")]
    Envelope(String),

    #[error("integrability error: {0}")]
    Integrability(String),

    #[error("insufficient paths: need {needed}, have {available}")]
    InsufficientPaths { needed: usize, available: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
