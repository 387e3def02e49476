use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the domain on which a quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Solver or experiment settings that cannot be run.
    #[error("configuration error: {0}")]
    Config(String),
    /// A lookup reached past the populated history of a series.
    #[error("sequencing error: {0}")]
    Sequencing(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn sequencing<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Sequencing(msg.into()))
}
