use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {key}: {reason}")]
    Config { key: String, reason: String },
    #[error("{context}: {source}")]
    Core { context: String, source: rwpin::Error },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invariant violated: {name}: {detail}")]
    Invariant { name: String, detail: String },
}

impl CliError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config { key: key.into(), reason: reason.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// Process exit status: 2 for configuration problems, 3 for invariant
    /// violations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Config { .. } => 2,
            CliError::Invariant { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attaches the module name to core errors.
pub trait Context<T> {
    fn ctx(self, context: &str) -> Result<T>;
}

impl<T> Context<T> for rwpin::Result<T> {
    fn ctx(self, context: &str) -> Result<T> {
        self.map_err(|source| CliError::Core { context: context.to_string(), source })
    }
}
