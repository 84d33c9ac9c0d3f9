use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the scan engine.
#[derive(Debug, Error)]
pub enum MssError {
    #[error("unknown pattern kind `{0}`")]
    UnknownKind(String),

    #[error("invalid parameters for pattern `{name}`: {reason}")]
    InvalidPattern { name: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inconsistent geometry: {0}")]
    Geometry(String),

    #[error("net too large: {entries} entries exceed cap {cap} (alpha = {alpha}, beta = {beta})")]
    NetTooLarge {
        entries: u128,
        cap: u64,
        alpha: f64,
        beta: f64,
    },

    #[error("net is empty")]
    EmptyNet,

    #[error("kernel of {kernel:?} cells does not fit tensor of {tensor:?} cells")]
    KernelTooLarge {
        kernel: Vec<usize>,
        tensor: Vec<usize>,
    },

    #[error("placement infeasible after {0} redraws")]
    PlacementInfeasible(usize),

    #[error("insufficient replicates: {0}")]
    InsufficientReplicates(String),

    #[error("tensor file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl MssError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MssError::InvalidArgument(msg.into())
    }

    pub(crate) fn geometry(msg: impl Into<String>) -> Self {
        MssError::Geometry(msg.into())
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, MssError::Io { .. } | MssError::PlacementInfeasible(_))
    }
}

pub type Result<T, E = MssError> = std::result::Result<T, E>;
