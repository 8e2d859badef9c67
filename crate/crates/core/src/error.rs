use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::canonicalization::CanonError;
use crate::diffcore::DiffError;
use crate::skeleton::SkeletonError;

/// Crate-wide error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Canonicalization(#[from] CanonError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("format: {0}")]
    Format(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("part index {0} out of range")]
    PartIndexOutOfRange(usize),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("non-finite gradient at step {0}")]
    NonFiniteGradient(usize),
    #[error("marching cubes found no iso-crossings")]
    EmptySurface,
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("mesh is not watertight ({0} boundary edges)")]
    NonWatertight(usize),
    #[error("interior sampling stalled: acceptance {0:e}")]
    SamplingStalled(f64),
    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
