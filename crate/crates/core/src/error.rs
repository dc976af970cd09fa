//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("no points survived the operation")]
    EmptyResult,

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("all correspondences rejected")]
    NoCorrespondences,

    #[error("linear system is singular or too ill-conditioned")]
    SingularSystem,

    #[error("target cloud has no normals (required for point-to-plane)")]
    MissingNormals,

    #[error("all global registration trials failed")]
    AllTrialsFailed,

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("adjusted rand index undefined for these partitions")]
    UndefinedAri,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: String,
        location: String,
        message: String,
    },

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
