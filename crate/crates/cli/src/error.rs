use std::fmt;

use hyperent::ErrorKind;

/// Error surfaced by a subcommand, carrying the exit-code class.
#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn with_context(self, path: &std::path::Path) -> Self {
        Self {
            kind: self.kind,
            message: format!("{}: {}", path.display(), self.message),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => 2,
            ErrorKind::Io => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<hyperent::Error> for CliError {
    fn from(e: hyperent::Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self {
            kind: ErrorKind::Io,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Self {
                kind: ErrorKind::Io,
                message: e.to_string(),
            }
        } else {
            Self::validation(format!("malformed JSON: {e}"))
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches the offending path to I/O errors.
pub fn with_path<T>(r: hyperent::Result<T>, path: &std::path::Path) -> CliResult<T> {
    r.map_err(|e| {
        let kind = e.kind();
        CliError {
            kind,
            message: format!("{}: {e}", path.display()),
        }
    })
}
