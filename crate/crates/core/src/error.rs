use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::DepthMap;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid depth {0} (must be positive and finite)")]
    InvalidDepth(f64),

    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("dimension mismatch: {what} is {got:?}, expected {expected:?}")]
    DimensionMismatch {
        what: String,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("warp {src}->{dst} failed: {source}")]
    WarpPair {
        src: usize,
        dst: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed file {}: {reason}", .path.display())]
    Malformed { path: PathBuf, reason: String },

    #[error("dimension mismatch in {}: {reason}", .path.display())]
    FileDimensionMismatch { path: PathBuf, reason: String },

    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty mesh")]
    EmptyMesh,

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("suspected misalignment between mesh and captures: {consistent} of {total} clutter vertices are depth-consistent")]
    SuspectedMisalignment { consistent: usize, total: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("prediction set does not match mesh: {0}")]
    PredictionMismatch(String),

    #[error("unknown backend '{name}' (available: {available})")]
    UnknownBackend { name: String, available: String },

    #[error("backend '{backend}' failed: {reason}")]
    Backend { backend: String, reason: String },

    /// Some hole regions had no valid depth in their surrounding band.
    /// `partial` carries everything that could be filled.
    #[error("{pixels} hole pixels have no valid depth support")]
    Unfillable {
        pixels: usize,
        partial: Box<DepthMap>,
    },

    #[error("iteration {iteration}, frame {frame}: {source}")]
    Iteration {
        iteration: usize,
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("no frames to fuse")]
    NoFrames,

    #[error("voxel grid too large: {voxels} voxels exceeds cap {cap}")]
    GridTooLarge { voxels: u64, cap: u64 },

    #[error("degenerate scene spec: {0}")]
    DegenerateSpec(String),

    #[error("metric error: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(what: impl Into<String>, expected: (usize, usize), got: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            got,
        }
    }
}
