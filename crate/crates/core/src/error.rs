use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report.
///
/// Variants are grouped by the kind of caller mistake they signal; [`Error::kind`]
/// folds them into the three classes the command line maps to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("bad magic in {0}")]
    BadMagic(PathBuf),
    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload { path: PathBuf, expected: usize, found: usize },
    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("empty mask")]
    EmptyMask,
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("empty list")]
    EmptyList,
    #[error("target size must be at least 1x1")]
    ZeroTargetSize,
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("cache was produced by an older parameter generation")]
    StaleCache,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("too few points: need {needed}, have {have}")]
    TooFewPoints { needed: usize, have: usize },
    #[error("gamma must be positive, got {0}")]
    NonPositiveGamma(f64),
    #[error("eigen decomposition failed: {0}")]
    EigenFailure(String),
    #[error("layer mismatch: expected {expected}, found {found}")]
    LayerMismatch { expected: String, found: String },
    #[error("threshold {0} outside [0, 1)")]
    BadThreshold(f64),
    #[error("duplicate semantic label {0}")]
    DuplicateLabel(String),
    #[error("missing layer {layer} for image {image_id}")]
    MissingLayer { image_id: String, layer: String },
    #[error("empty manifest")]
    EmptyManifest,
    #[error("duplicate image id {0}")]
    DuplicateImageId(String),
    #[error("missing prototype for {0}")]
    MissingPrototype(String),
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("degenerate clusters: {0}")]
    DegenerateClusters(String),
    #[error("unknown vehicle {0}")]
    UnknownVehicle(String),
    #[error("no training pairs with an opposite-view target")]
    NoTrainingPairs,
    #[error("empty gallery")]
    EmptyGallery,
    #[error("query {0} has no match in the gallery")]
    QueryWithoutMatch(usize),
    #[error("negative weight {0}")]
    NegativeWeight(f64),
    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),
    #[error("region {0} does not fit the feature grid")]
    RegionOverflow(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::NonFiniteActivation { .. } | Error::EigenFailure(_) | Error::Diverged(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
