use thiserror::Error;

use crate::nifti::NiftiError;
use crate::unet::WeightsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spacing {0:?}: every component must be finite and > 0")]
    InvalidSpacing([f64; 3]),

    #[error("index ({z}, {y}, {x}) out of bounds for shape {shape:?}")]
    Index {
        z: usize,
        y: usize,
        x: usize,
        shape: [usize; 3],
    },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid interpolation: {0}")]
    InvalidInterpolation(String),

    #[error("invalid volume kind: expected {expected}, found {found}")]
    InvalidKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("alignment mismatch: {what}: {left:?} vs {right:?}")]
    Alignment {
        what: &'static str,
        left: Vec<f64>,
        right: Vec<f64>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid architecture descriptor: {0}")]
    Descriptor(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("architecture fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("ensemble mismatch: {0}")]
    EnsembleMismatch(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("invalid metric {metric} for team {team:?}")]
    InvalidMetric { team: String, metric: &'static str },

    #[error(transparent)]
    Nifti(#[from] NiftiError),

    #[error(transparent)]
    Weights(#[from] WeightsError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape_mismatch(what: &'static str, left: [usize; 3], right: [usize; 3]) -> Self {
        Error::Alignment {
            what,
            left: left.iter().map(|&v| v as f64).collect(),
            right: right.iter().map(|&v| v as f64).collect(),
        }
    }
}
