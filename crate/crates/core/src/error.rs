use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("spatial dims {dims:?} are not divisible by {divisor}")]
    Divisibility { dims: [usize; 3], divisor: usize },

    #[error("channel {channel} has zero foreground standard deviation")]
    ConstantChannel { channel: usize },

    #[error("channel {channel} has no foreground voxels")]
    EmptyForeground { channel: usize },

    #[error("mask is not binary: value {value} at flat index {index}")]
    NonBinary { value: u8, index: usize },

    #[error("label code {code} at flat index {index} is outside {{0,1,2,3}}")]
    InvalidLabel { code: u8, index: usize },

    #[error("timestep {t} outside [{lo}, {hi}]")]
    TimestepOutOfRange { t: usize, lo: usize, hi: usize },

    #[error("probabilities must lie in [0,1]; found {0}")]
    OutOfUnitRange(f64),

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),

    #[error("leakage: case {case} appears in both training and test sets")]
    Leakage { case: String },

    #[error("inconsistent metric conventions across runs: {0}")]
    InconsistentConventions(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("nifti error at {path}: {source}")]
    Nifti {
        path: PathBuf,
        #[source]
        source: nifti::NiftiError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}
