use std::path::PathBuf;

use hybrid_rla_core::AuditError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{file}:{line}:{column}: {message}")]
    Parse {
        file: String,
        line: u64,
        column: u64,
        message: String,
    },

    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Audit(#[from] AuditError),

    /// The request conflicts with the recorded state of the audit.
    #[error("{message} (see {})", log.display())]
    State { message: String, log: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for bad input, 3 for a refused state transition.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::State { .. } | CliError::Audit(AuditError::State(_)) => 3,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
