//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown token id {0}")]
    UnknownToken(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("judge backend error: {0}")]
    Judge(String),

    #[error("stage error: {0}")]
    Stage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("container format error: {0}")]
    Container(String),
}

pub type Result<T> = std::result::Result<T, Error>;
