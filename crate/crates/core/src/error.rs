use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input. `line` is 1-based; 0 means the location is not line-oriented.
    #[error("parse error at {location}:{line}: {message}")]
    Parse { location: String, line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    /// Camera forward axis is (numerically) vertical, so heading is undefined.
    #[error("camera forward vector is vertical; yaw undefined")]
    GimbalDegenerate,

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("clip has {len} frames, shorter than one {window}-frame window")]
    TooShort { len: usize, window: usize },

    #[error("no feasible start frame: {0}")]
    Infeasible(String),

    #[error("frame {frame} outside clip of length {len}")]
    OutOfBounds { frame: usize, len: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no step has a defined direction")]
    AllUndefined,

    #[error("empty input")]
    EmptyInput,

    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(location: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { location: location.into(), line, message: message.into() }
    }

    /// Short machine-readable tag, used in structured error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::GimbalDegenerate => "gimbal_degenerate",
            Error::EmptyResult(_) => "empty_result",
            Error::TooShort { .. } => "too_short",
            Error::Infeasible(_) => "infeasible",
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::AllUndefined => "all_undefined",
            Error::EmptyInput => "empty_input",
            Error::InvalidSpec(_) => "invalid_spec",
        }
    }
}
