use std::path::PathBuf;

/// Errors produced by the alignment toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cannot upsample from {from_hz} Hz to {to_hz} Hz")]
    Upsample { from_hz: f64, to_hz: f64 },

    #[error("sensor {0} is missing")]
    MissingSensor(String),

    #[error("sensor {0} appears more than once")]
    DuplicateSensor(String),

    #[error("window start {start} out of range for signal of length {len}")]
    WindowStart { start: usize, len: usize },

    #[error("misaligned pair {id}: video span does not overlap the IMU window")]
    Misaligned { id: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero-norm vector cannot be normalized")]
    ZeroNorm,

    #[error("label {label} at index {index} is outside [0, {n_classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        n_classes: usize,
    },

    #[error("tensor {0} is frozen and cannot be updated")]
    Frozen(String),

    #[error("unknown tensor {0}")]
    UnknownTensor(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (info_nce={info_nce}, supervised={supervised})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        info_nce: f64,
        supervised: f64,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest:\n{}", .0.join("\n"))]
    Manifest(Vec<String>),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Stable short code for machine-readable error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Shape(_) => "shape_mismatch",
            Error::Upsample { .. } => "upsample_rejected",
            Error::MissingSensor(_) => "missing_sensor",
            Error::DuplicateSensor(_) => "duplicate_sensor",
            Error::WindowStart { .. } => "window_start",
            Error::Misaligned { .. } => "misaligned_pair",
            Error::NonFinite(_) => "non_finite",
            Error::ZeroNorm => "zero_norm",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::Frozen(_) => "frozen_tensor",
            Error::UnknownTensor(_) => "unknown_tensor",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Format { .. } => "malformed_file",
            Error::Io { .. } => "io",
            Error::Manifest(_) => "malformed_manifest",
            Error::Json(_) => "json",
        }
    }
}
