use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// The neighbor graph has no path to some ranks.
    #[error("disconnected partitioning: unreachable ranks {unreachable:?} from rank {owner}")]
    Disconnected { owner: usize, unreachable: Vec<usize> },

    /// A grafted cell arrived before its parent.
    #[error("orphan cell from origin {origin}: key {key:#x} at level {level}")]
    OrphanCell { origin: u32, key: u64, level: u8 },

    #[error("duplicate cell from origin {origin}: key {key:#x} at level {level}")]
    DuplicateCell { origin: u32, key: u64, level: u8 },

    #[error("deadlock at step {step}: waiting ranks {waiting:?}")]
    Deadlock {
        step: usize,
        /// `(rank, expected tags)` for every rank still waiting.
        waiting: Vec<(usize, Vec<u32>)>,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("wire format error: {0}")]
    Wire(String),

    #[error("i/o error: {0}")]
    Io(String),

    /// A computed result disagreed with its oracle.
    #[error("verification failed: {0}")]
    Verification(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
