use thiserror::Error;

/// Errors raised by samplers, weights, invariant functions and estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid parameters supplied before any computation started.
    #[error("configuration: {0}")]
    Config(String),
    /// A state or argument outside the domain of the requested function.
    #[error("domain: {0}")]
    Domain(String),
    /// Inconsistent use of the API, e.g. a weight applied to the wrong model.
    #[error("usage: {0}")]
    Usage(String),
    /// A numerical routine failed to reach its target.
    #[error("numerical: {0}")]
    Numerical(String),
}

impl Error {
    /// Short machine-readable category used in run manifests.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Usage(_) => "usage",
            Error::Numerical(_) => "numerical",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
