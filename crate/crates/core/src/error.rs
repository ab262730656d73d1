use std::path::PathBuf;

use thiserror::Error;

use crate::lmb::Label;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label {0} is not present in the density")]
    UnknownLabel(Label),

    #[error("cannot resample a component whose particle weights are all zero")]
    DegenerateWeights,

    #[error("label {0} appears in both the prior and the birth set")]
    LabelCollision(Label),

    #[error("densities disagree on timestamp ({expected} vs {found})")]
    TimestampMismatch { expected: u32, found: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("flooding left {undelivered} reachable node(s) without the message after {max_rounds} rounds")]
    FloodIncomplete { undelivered: usize, max_rounds: usize },

    #[error("descent did not enter a cycle within {0} iterations")]
    NoCycle(usize),

    #[error("malformed density record at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
