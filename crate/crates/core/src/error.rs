use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("class list is empty")]
    EmptyClassList,

    #[error("line {line}: expected `verb object`, found {tokens} token(s)")]
    MalformedLine { line: usize, tokens: usize },

    #[error("line {line}: duplicate class `{verb} {object}`")]
    DuplicateClass {
        line: usize,
        verb: String,
        object: String,
    },

    #[error("bad magic {0:?}, expected \"DEFR\"")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("nonzero reserved header field {0:#06x}")]
    Reserved(u16),

    #[error("truncated payload: header declares {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("{0} trailing bytes after declared payload")]
    TrailingBytes(u64),

    #[error("label value {value} at flat index {index} is not +1 or -1")]
    BadLabel { index: usize, value: i64 },

    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("{what} row {row} has zero norm")]
    ZeroNorm { what: &'static str, row: usize },

    #[error("label row {0} has no positive class")]
    NoPositive(usize),

    #[error("dimension mismatch: {left} = {left_dim}, {right} = {right_dim}")]
    DimMismatch {
        left: &'static str,
        left_dim: usize,
        right: &'static str,
        right_dim: usize,
    },

    #[error("sidecar: {0}")]
    Sidecar(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("no class has a positive label; mAP is undefined")]
    AllClassesSkipped,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(
        left: &'static str,
        left_dim: usize,
        right: &'static str,
        right_dim: usize,
    ) -> Self {
        Error::DimMismatch {
            left,
            left_dim,
            right,
            right_dim,
        }
    }

    /// Process exit code for the CLI: 2 for numeric failures, 1 for
    /// everything else (bad input, bad configuration, I/O).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss { .. } | Error::NonFinite { .. } | Error::ZeroNorm { .. } => 2,
            _ => 1,
        }
    }
}
