//! CLI failures and their exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error at {path}: {msg}")]
    Schema { path: String, msg: String },
    #[error(transparent)]
    Core(#[from] hjb_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 schema, 3 admissibility, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        use hjb_core::Error as E;
        match self {
            CliError::Schema { .. } => 2,
            CliError::Core(E::Config(_) | E::Usage(_)) => 2,
            CliError::Core(E::Admissibility(_)) => 3,
            _ => 4,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }
}
