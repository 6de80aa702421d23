use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("capture parse error: {0}")]
    Capture(String),

    #[error("sample file error: {0}")]
    SampleFile(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch: expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },

    #[error("training aborted: {0}")]
    Training(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("dataset split failed: {0}")]
    Split(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<pcap_file::PcapError> for Error {
    fn from(e: pcap_file::PcapError) -> Self {
        Error::Capture(e.to_string())
    }
}
