//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent. The message
    /// names the offending field.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A data file could not be parsed. `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The partitioner could not produce valid shards.
    #[error("partition error: {0}")]
    Partition(String),

    /// An index or id referenced data that does not exist.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Local training produced a non-finite value.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// Local training failed for a specific participant.
    #[error("training error at round {round}, client {client}: {message}")]
    Training {
        round: usize,
        client: usize,
        message: String,
    },

    /// Model updates could not be aggregated.
    #[error("aggregation error: {0}")]
    Aggregation(String),

    /// Fewer eligible clients remain than the round requested.
    #[error("selection error: requested {requested} clients but only {available} are eligible")]
    Selection { requested: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
