use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {node} out of range for graph with {n_nodes} nodes")]
    InvalidNode { node: usize, n_nodes: usize },
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("dense {n}x{n} intermediate exceeds the configured cap of {cap} nodes")]
    CapacityExceeded { n: usize, cap: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty sample set, cannot estimate a distribution")]
    EmptyDistribution,
    #[error("k = {k} is invalid for {n_nodes} nodes (need 1 <= k <= n - 1)")]
    InvalidK { k: usize, n_nodes: usize },
    #[error("variant {0} requires dual kNN graphs")]
    MissingDualGraphs(&'static str),
    #[error("forward tape does not match the parameters: {0}")]
    TapeMismatch(String),
    #[error("mask selects no nodes")]
    EmptyMask,
    #[error("non-finite gradient or loss: {0}")]
    NonFiniteGradient(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteGradient(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
