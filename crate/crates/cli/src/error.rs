use std::path::PathBuf;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or configuration, detected before any compute.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{0}")]
    Runtime(String),

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] cxrnet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Core(cxrnet::Error::Config(_) | cxrnet::Error::Usage(_)) => 1,
            _ => 2,
        }
    }
}

pub fn write_file(path: PathBuf, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(&path, contents).map_err(|source| CliError::Write { path, source })
}
