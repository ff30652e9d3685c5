//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration value, unknown key, or invalid command usage.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent manifest file.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Tensor or parameter shape inconsistent with the declared layout.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid input data (image sizes, identity counts, batch composition).
    #[error("data error: {0}")]
    Data(String),

    /// Training fault (non-finite loss, degenerate embedding, pairing violation).
    #[error("training fault: {0}")]
    Train(String),

    /// Checkpoint file problems: version mismatch, digest failure, truncation.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Metric computation rejected its inputs.
    #[error("metric error: {0}")]
    Metric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 for usage/config problems, 2 for runtime faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Manifest(_) => 1,
            _ => 2,
        }
    }
}
