use std::io;

use thiserror::Error;

use crate::qstate::BasisPair;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty block: no coincidences recorded for {0}")]
    EmptyBlock(BasisPair),

    #[error("no samples available for {0}")]
    ZeroSamples(&'static str),

    #[error("{stream} stream is not sorted at index {index} ({previous} ps followed by {current} ps)")]
    UnsortedInput {
        stream: &'static str,
        index: u64,
        previous: u64,
        current: u64,
    },

    #[error("invalid detector layout: {0}")]
    InvalidLayout(String),

    #[error("value {value} outside the domain of {function}")]
    Domain { function: &'static str, value: f64 },

    #[error("tag file format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("calibration failed: {0}")]
    NoPeaks(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
