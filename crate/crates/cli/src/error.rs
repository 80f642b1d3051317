use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("missing {what} file {path}; {hint}")]
    Missing { what: &'static str, path: PathBuf, hint: &'static str },

    #[error("output directory {0} is not empty; pass --force to overwrite")]
    NotEmpty(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] rpn3d::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit status for this error class.
    pub fn exit_code(&self) -> u8 {
        use rpn3d::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Missing { .. } => 4,
            CliError::NotEmpty(_) => 5,
            CliError::Core(e) => match e {
                E::Io(_) => 3,
                E::Format(_) | E::Json(_) => 6,
                E::InvalidArgument(_) | E::InvalidBox(_) | E::InvalidAnchorSpec(_) | E::DimensionMismatch(_) => 7,
                E::DetectionFailure(_) => 8,
                E::Diverged { .. } => 9,
                E::DegenerateGeometry(_) => 10,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
