use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed table {path}: {reason}")]
    Table { path: String, reason: String },

    #[error("numerical failure at point {index} ({point}): {source}")]
    Numerical {
        index: usize,
        point: String,
        #[source]
        source: ppk_core::Error,
    },
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 0 success, 1 bad input or unusable files, 2 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
