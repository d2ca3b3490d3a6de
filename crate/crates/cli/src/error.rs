use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid input, or an unusable output location.
    Config {
        path: PathBuf,
        field: Option<String>,
        message: String,
    },
    Compute(cdnsla_core::Error),
}

impl CliError {
    pub fn config(path: &Path, field: Option<String>, message: String) -> Self {
        CliError::Config {
            path: path.to_path_buf(),
            field,
            message,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Compute(_) => EXIT_COMPUTE,
        }
    }

    pub fn record(&self) -> ErrorRecord {
        match self {
            CliError::Config {
                path,
                field,
                message,
            } => ErrorRecord {
                kind: "config",
                exit_code: EXIT_CONFIG,
                message: message.clone(),
                path: Some(path.display().to_string()),
                field: field.clone(),
            },
            CliError::Compute(e) => ErrorRecord {
                kind: "compute",
                exit_code: EXIT_COMPUTE,
                message: e.to_string(),
                path: None,
                field: None,
            },
        }
    }
}

impl From<cdnsla_core::Error> for CliError {
    fn from(e: cdnsla_core::Error) -> Self {
        CliError::Compute(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config {
                path,
                field: Some(field),
                message,
            } => write!(f, "{}: {field}: {message}", path.display()),
            CliError::Config { path, message, .. } => write!(f, "{}: {message}", path.display()),
            CliError::Compute(e) => write!(f, "{e}"),
        }
    }
}

/// Machine-readable failure written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}
