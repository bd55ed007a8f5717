use thiserror::Error;

use crate::matrix::MatrixError;
use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {}", format_violations(.0))]
    InvalidSpec(Vec<Violation>),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("resource guard exceeded: {0}")]
    Guard(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code: 1 for bad inputs, 2 for numerical breakdowns.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Matrix(_) | Error::Numerical(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| format!("[{}] {}", v.code, v.message)).collect::<Vec<_>>().join("; ")
}
