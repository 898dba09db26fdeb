use thiserror::Error;

use crate::expmat::NumericError;
use crate::mcore::{ModelError, TargetKey};
use crate::partitions::PartitionError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("initial distribution puts mass {mass} on the target sets; split it with decompose_initial first")]
    InitialMassOnTargets { mass: f64 },
    #[error("sets must be disjoint")]
    Overlap,
    #[error("{0}")]
    Domain(String),
    #[error("inconsistent input: {0}")]
    Inconsistent(String),
    #[error("conditioning event has probability zero")]
    NullConditioning,
    #[error("target {key} is not absorbing: rate {rate} from state `{from}` to state `{to}`")]
    NotAbsorbing {
        key: TargetKey,
        from: String,
        to: String,
        rate: f64,
    },
    #[error("no path can satisfy the constraints: {0}")]
    Contradiction(String),
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn inconsistent(msg: impl Into<String>) -> Self {
        Error::Inconsistent(msg.into())
    }
}
