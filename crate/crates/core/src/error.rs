use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty annotation list")]
    EmptyAnnotations,
    #[error("malformed annotation: category index {index} out of range for {classes} categories")]
    MalformedAnnotation { index: usize, classes: usize },
    #[error("item unusable: every vote count was rejected as an outlier")]
    UnusableItem,
    #[error("cannot normalize vote counts with zero total")]
    ZeroTotal,
    #[error("invalid label distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid emotion set: {0}")]
    InvalidEmotionSet(String),
    #[error("category count mismatch: expected {expected}, got {actual}")]
    ClassMismatch { expected: usize, actual: usize },
    #[error("unknown scheme `{0}` (expected one of mv, ml, pld, cel)")]
    UnknownScheme(String),
    #[error("invalid multi-label threshold {0}; must lie in (0, 1)")]
    InvalidThreshold(f64),
    #[error("target kind not valid for this loss: {0}")]
    TargetKind(&'static str),
    #[error("probabilistic label drawing needs a drawn target")]
    MissingDraw,

    #[error("shape mismatch at layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },
    #[error("invalid layer specification: {0}")]
    LayerSpec(String),
    #[error("forward cache is stale or does not belong to this model")]
    StaleCache,
    #[error("gradient check refused: {0}")]
    GradCheckRefused(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("tagger subsample size {m} exceeds tag count {tags}")]
    SubsampleTooLarge { m: usize, tags: usize },
    #[error("invalid noise model: {0}")]
    NoiseModel(String),

    #[error("{path}:{line}: {detail}")]
    Csv {
        path: PathBuf,
        line: u64,
        detail: String,
    },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint truncated: {0}")]
    CheckpointTruncated(String),
    #[error("checkpoint shape disagreement: {0}")]
    CheckpointShape(String),
    #[error("checkpoint is not a crowdfer checkpoint: {0}")]
    CheckpointFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
