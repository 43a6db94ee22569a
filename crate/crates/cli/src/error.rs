use thiserror::Error;

use crate::config::FieldError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", format_fields(.0))]
    Validation(Vec<FieldError>),
    #[error("[{module}] {message}")]
    Runtime { module: &'static str, message: String },
    #[error("[io] {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn format_fields(errors: &[FieldError]) -> String {
    errors.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    pub fn runtime(module: &'static str, e: impl std::fmt::Display) -> Self {
        Self::Runtime { module, message: e.to_string() }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Runtime { .. } | Self::Io { .. } => 3,
        }
    }
}
