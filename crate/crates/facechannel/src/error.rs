use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
