use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent input.
    #[error("{0}")]
    Config(String),

    /// Certificate scheme incompatible with the configured method.
    #[error("scheme/method mismatch: {0}")]
    Mismatch(String),

    #[error("run cap exceeded: {runs} runs requested, cap is {cap}")]
    Cap { runs: usize, cap: usize },

    #[error(transparent)]
    Lib(#[from] descentlab::Error),

    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write CSV {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use descentlab::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Mismatch(_) => 3,
            CliError::Cap { .. } => 4,
            CliError::Lib(e) => match e {
                E::Diverged { .. } | E::CertificateFailure { .. } | E::NumericFailure { .. } => 1,
                E::InvalidArgument(_) | E::InvalidParams(_) | E::InvalidState(_) | E::Unsupported(_) => 2,
            },
            CliError::Io { .. } | CliError::Csv { .. } => 1,
        }
    }
}

pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}
