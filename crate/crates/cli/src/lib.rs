//! File formats and IO for the waveform speaker-verification pipeline:
//! WAV audio, corpus manifests, trial/score lists, embedding tables, model
//! checkpoints, filter-response CSV export and metric reports. The math
//! lives in `wavespk-core`; everything here is plumbing around it.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod manifest;
pub mod report;
pub mod responses;
pub mod trials;
pub mod wav;

use std::fmt;

/// Process-level error classes, mapped to exit codes:
/// usage = 1, data = 2, numeric = 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn data(err: impl fmt::Display) -> CliError {
        CliError::Data(err.to_string())
    }

    pub fn usage(err: impl fmt::Display) -> CliError {
        CliError::Usage(err.to_string())
    }

    pub fn numeric(err: impl fmt::Display) -> CliError {
        CliError::Numeric(err.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
