use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the calibration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("split `{split}` declares {declared} records but {actual} were found")]
    CountMismatch {
        split: String,
        declared: usize,
        actual: usize,
    },

    #[error("record `{id}` has {found} features, manifest declares {expected}")]
    FeatureDimMismatch { id: String, expected: usize, found: usize },

    #[error("dynamics entry references unknown record id `{0}`")]
    OrphanDynamics(String),

    #[error("malformed record in {path}:{line}: {reason}")]
    MalformedRecord { path: PathBuf, line: usize, reason: String },

    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error("epoch {epoch} out of range (trained {epochs} epochs)")]
    EpochOutOfRange { epoch: usize, epochs: usize },

    #[error("no clean-marked reference samples")]
    EmptyCleanSet,

    #[error("K = {k} exceeds the {available} available reference samples")]
    KTooLarge { k: usize, available: usize },

    #[error("timestep {t} out of range [{min}, {max}]")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },

    #[error("no certain samples available for warm-up")]
    NoWarmupData,

    #[error("no dynamics recorded for sample `{0}`")]
    MissingDynamics(String),

    #[error("no true labels available for evaluation")]
    NoTrueLabels,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
