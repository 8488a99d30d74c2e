//! Crate-wide error type. Variants map onto the CLI exit-code contract:
//! Config -> 2, Format/MissingArtifact/HashMismatch/Io -> 3, Divergence -> 4.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum CospaError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("file format error: {0}")]
    Format(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("artifact hash mismatch: {0}")]
    HashMismatch(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CospaError>;
