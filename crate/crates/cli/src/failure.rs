use std::fmt;
use std::path::Path;

/// A CLI-level failure with a stable kind tag.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn config(message: String) -> Self {
        Self { kind: "config", message }
    }

    pub fn empty_input(path: &Path, what: &str) -> Self {
        Self {
            kind: "empty_input",
            message: format!("{}: no {what} found", path.display()),
        }
    }

    pub fn missing_input(path: &Path) -> Self {
        Self {
            kind: "missing_input",
            message: format!("{} does not exist", path.display()),
        }
    }

    pub fn invalid(message: String) -> Self {
        Self {
            kind: "invalid_argument",
            message,
        }
    }

    pub fn context(self, path: &Path) -> Self {
        Self {
            message: format!("{}: {}", path.display(), self.message),
            ..self
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

/// Kind tag for an error chain: the first CLI or library error found.
pub fn kind_of(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind;
        }
        if let Some(e) = cause.downcast_ref::<discgan_core::Error>() {
            return e.kind();
        }
    }
    "internal"
}

/// One-line JSON error report for stderr.
pub fn error_line(err: &anyhow::Error) -> String {
    serde_json::json!({
        "error": kind_of(err),
        "message": format!("{err:#}"),
    })
    .to_string()
}
