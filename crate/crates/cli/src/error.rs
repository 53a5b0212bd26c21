use std::path::PathBuf;

use serde_json::json;

/// Exit status for invalid configuration.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for failures during a campaign.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Runtime(String),

    #[error("replay differs from {path}: {detail}")]
    ReplayMismatch { path: PathBuf, detail: String },

    #[error(transparent)]
    Core(#[from] wgfi::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn is_config(&self) -> bool {
        match self {
            CliError::Config(_) => true,
            CliError::Core(e) => e.is_config(),
            CliError::Runtime(_) | CliError::ReplayMismatch { .. } => false,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_config() {
            EXIT_CONFIG
        } else {
            EXIT_RUNTIME
        }
    }

    /// One-line JSON record written to standard error.
    pub fn record(&self) -> serde_json::Value {
        json!({
            "error": {
                "kind": if self.is_config() { "config" } else { "runtime" },
                "message": self.to_string(),
            }
        })
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}
