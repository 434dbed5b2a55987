use std::path::PathBuf;

/// Failures surfaced by the command line. The variant decides the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<lcqsim_core::Error> for CliError {
    fn from(err: lcqsim_core::Error) -> Self {
        use lcqsim_core::Error as E;
        match err {
            E::Invalid { .. } | E::EnumerationLimit { .. } | E::Empty(_) => CliError::Validation(err.to_string()),
            _ => CliError::Runtime(err.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(err: csv::Error) -> Self {
        CliError::Runtime(format!("csv: {err}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
