//! Command errors and their single-line JSON rendering.

use std::path::{Path, PathBuf};

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] imu_align::Error),

    #[error("invalid config {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("missing artifacts in {dir}: {}", .missing.join(", "))]
    MissingArtifacts { dir: PathBuf, missing: Vec<String> },

    #[error("gradient check failed: {}", .failed.join(", "))]
    GradCheck { failed: Vec<String> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Config { .. } => "invalid_config",
            CliError::MissingArtifacts { .. } => "missing_artifacts",
            CliError::GradCheck { .. } => "gradcheck_failed",
            CliError::Io { .. } => "io",
            CliError::Csv(_) => "csv",
        }
    }

    pub fn context(&self) -> serde_json::Value {
        match self {
            CliError::Core(imu_align::Error::Manifest(lines)) => json!({ "errors": lines }),
            CliError::Core(
                imu_align::Error::Io { path, .. } | imu_align::Error::Format { path, .. },
            ) => {
                json!({ "path": path })
            }
            CliError::Core(imu_align::Error::NonFiniteLoss { epoch, batch, .. }) => {
                json!({ "epoch": epoch, "batch": batch })
            }
            CliError::Config { path, .. } | CliError::Io { path, .. } => json!({ "path": path }),
            CliError::MissingArtifacts { dir, missing } => {
                json!({ "dir": dir, "missing": missing })
            }
            CliError::GradCheck { failed } => json!({ "failed": failed }),
            _ => json!({}),
        }
    }

    /// `{code, message, context}` on one line.
    pub fn to_json_line(&self) -> String {
        json!({
            "code": self.code(),
            "message": self.to_string(),
            "context": self.context(),
        })
        .to_string()
    }
}
