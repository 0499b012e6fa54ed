use std::io;

use thiserror::Error;

/// Errors produced by the exploration library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("voxel {0:?} is out of bounds")]
    OutOfBounds([i64; 3]),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("no collision-free start pose found after {0} attempts")]
    NoValidStart(usize),

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("ranks have zero variance")]
    ZeroVariance,
}

pub type Result<T> = std::result::Result<T, Error>;
