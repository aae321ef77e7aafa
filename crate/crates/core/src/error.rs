use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("tensor shape {shape:?} holds {expected} values but {actual} were given")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("unknown environment `{0}` (expected catch, cartpole or mountain_car)")]
    UnknownEnv(String),

    #[error("step called on a terminated episode")]
    EpisodeOver,

    #[error("action {action} out of range for {count} actions")]
    InvalidAction { action: usize, count: usize },

    #[error("observation has {actual} values, expected {expected}")]
    ObservationDim { expected: usize, actual: usize },

    #[error("no trajectory long enough for unroll K={k} and TD steps n={n}")]
    NoEligibleTrajectory { k: usize, n: usize },

    #[error("unsupported file version `{found}` (expected `{expected}`)")]
    Version { expected: String, found: String },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("dataset was collected on `{found}` but `{expected}` was requested")]
    EnvMismatch { expected: String, found: String },

    #[error("missing tensor `{0}` in checkpoint")]
    MissingTensor(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
