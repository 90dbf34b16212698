use std::path::PathBuf;

/// Errors reported as a single `error: <module>: <message>` line.
#[derive(Debug)]
pub enum CliError {
    Core(neurotree_core::Error),
    Io { path: PathBuf, source: std::io::Error },
    Config(String),
    Usage(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "cli: {}: {source}", path.display()),
            CliError::Config(m) => write!(f, "cli: config: {m}"),
            CliError::Usage(m) => write!(f, "cli: usage: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<neurotree_core::Error> for CliError {
    fn from(e: neurotree_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// The message with embedded newlines collapsed.
    pub fn one_line(&self) -> String {
        self.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}
