use std::path::PathBuf;

use thiserror::Error;

use crate::simnet::{RankId, VirtualTime};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("rank {0} already has a crash scheduled")]
    AlreadyCrashed(RankId),
    #[error("event bound exceeded after {events} events at t={time}")]
    Livelock { events: u64, time: VirtualTime },
    #[error("deadlock at t={time}: ranks {ranks:?} blocked with no pending events")]
    Deadlock { ranks: Vec<RankId>, time: VirtualTime },
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
    #[error("{}:{line}: {msg}", path.display())]
    Config { path: PathBuf, line: usize, msg: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
}
