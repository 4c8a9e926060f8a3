use thiserror::Error;

/// One problem found while reading or validating a configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigIssue {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown key `{key}` (nearest valid key: `{suggestion}`)")]
    UnknownKey { key: String, suggestion: String },

    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigIssue {
    pub fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigIssue::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", render(.0))]
    Config(Vec<ConfigIssue>),

    #[error("usage: {0}")]
    Usage(String),

    #[error("{context}: {source}")]
    Runtime {
        context: String,
        #[source]
        source: nlflow_core::Error,
    },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

fn render(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    /// 2 for usage and configuration errors, 3 for aborts during computation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime { .. } | CliError::Io { .. } => 3,
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

/// Attaches a description of the failing step to a core error.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for nlflow_core::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Runtime {
            context: what(),
            source,
        })
    }
}
