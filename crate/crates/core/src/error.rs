//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has near-zero norm and cannot be normalized")]
    ZeroNorm,

    #[error("vector contains a non-finite component")]
    NonFinite,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("feature dimension must be at least 2, got {0}")]
    BadDimension(usize),

    #[error("identity group is empty")]
    EmptyGroup,

    #[error("cluster center is degenerate (near-zero mean), ranks are undefined")]
    DegenerateCenter,

    #[error("format error: {0}")]
    Format(String),

    #[error("face {face} of identity '{identity}' is not unit-norm (|norm - 1| = {deviation:.3e})")]
    Norm {
        identity: String,
        face: u32,
        deviation: f64,
    },

    #[error("duplicate identity '{0}'")]
    DuplicateIdentity(String),

    #[error("manifest fingerprint {manifest} does not match dataset fingerprint {dataset}")]
    FingerprintMismatch { manifest: String, dataset: String },

    #[error("unknown identity '{0}'")]
    UnknownIdentity(String),

    #[error("unknown face index {face} for identity '{identity}'")]
    UnknownFaceIndex { identity: String, face: u32 },

    #[error("identity '{identity}' has {size} faces, above the k-center cap of {cap}")]
    GroupTooLarge {
        identity: String,
        size: usize,
        cap: usize,
    },

    #[error("missing score for face {face} of identity '{identity}'")]
    MissingScore { identity: String, face: u32 },

    #[error("malformed score file: {0}")]
    MalformedScoreFile(String),

    #[error("holdout identity '{0}' is missing from the training set")]
    MissingIdentity(String),

    #[error("{available} impostor pairs are too few to resolve FAR {far:e}")]
    InsufficientPairs { available: usize, far: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for I/O failures, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io(_) => 2,
            _ => 1,
        }
    }
}
