//! Command failures, their exit codes and their one-line stderr records.

use std::fmt;
use std::path::Path;

use navcurate_core::Error;

pub const EXIT_INVALID: i32 = 2;
pub const EXIT_EMPTY: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn invalid(kind: &'static str, message: impl Into<String>) -> Self {
        Self { code: EXIT_INVALID, kind, message: message.into() }
    }

    pub fn empty(message: impl Into<String>) -> Self {
        Self { code: EXIT_EMPTY, kind: "empty_result", message: message.into() }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self { code: EXIT_IO, kind: "io", message: format!("{}: {err}", path.display()) }
    }

    pub fn parse(path: &Path, err: serde_json::Error) -> Self {
        Self::invalid("parse", format!("{}:{}: {err}", path.display(), err.line()))
    }

    /// The structured record written to stderr.
    pub fn record(&self) -> String {
        serde_json::json!({
            "level": "error",
            "kind": self.kind,
            "exit_code": self.code,
            "message": self.message,
        })
        .to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_IO,
            Error::EmptyResult(_) => EXIT_EMPTY,
            _ => EXIT_INVALID,
        };
        Self { code, kind: e.kind(), message: e.to_string() }
    }
}
