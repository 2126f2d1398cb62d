use thiserror::Error;

use crate::data::DataError;
use crate::modelfile::ModelError;
use crate::protocol::ProtocolError;
use crate::tree::TreeError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid value for `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("expected statistics for {expected} leaves, got {found}")]
    LeafCount { expected: usize, found: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("input has {found} columns where {expected} were expected")]
    Dimension { expected: usize, found: usize },
    #[error("zero total variance")]
    ZeroVariance,
    #[error("forest replica mismatch at iteration {iteration} on worker {rank}")]
    Replica { iteration: usize, rank: usize },
    #[error("design is rank deficient; collinear terms: {0}")]
    RankDeficient(String),
    #[error("efficiency {target} not reached; best in bounds is {achieved}")]
    Unattainable { target: f64, achieved: f64 },
    #[error("expected efficiency decreases near n = {at}")]
    NotMonotone { at: f64 },
    #[error("cluster: {0}")]
    Cluster(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
