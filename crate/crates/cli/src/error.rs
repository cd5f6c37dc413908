use std::fmt;

use gpdelta_core::GpError;

/// Process exit codes.
pub mod exit {
    pub const VALIDATION: i32 = 2;
    pub const STALE: i32 = 3;
    pub const IO: i32 = 4;
    pub const NUMERICAL: i32 = 5;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: exit::VALIDATION,
            kind: "validation",
            message: message.into(),
        }
    }

    pub fn io(context: impl fmt::Display, err: impl fmt::Display) -> Self {
        Self {
            code: exit::IO,
            kind: "io",
            message: format!("{context}: {err}"),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: exit::NUMERICAL,
            kind: "numerical",
            message: message.into(),
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind, "exit_code": self.code, "message": self.message })
            .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind, self.message)
    }
}

impl From<GpError> for CliError {
    fn from(e: GpError) -> Self {
        let (code, kind) = match &e {
            GpError::Dimension(_)
            | GpError::Invalid(_)
            | GpError::InvalidRadius(_)
            | GpError::DoubleApply(_)
            | GpError::UnsupportedIncrementalMode => (exit::VALIDATION, "validation"),
            GpError::StaleBundle(_) => (exit::STALE, "stale"),
            GpError::Format(_) => (exit::STALE, "format"),
            GpError::Io(_) => (exit::IO, "io"),
            GpError::NotPositiveDefinite { .. } | GpError::ResourceLimit(_) => {
                (exit::NUMERICAL, "numerical")
            }
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
