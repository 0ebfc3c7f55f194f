use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(m) => write!(f, "data: {m}"),
            CliError::Divergence(m) => write!(f, "numerical divergence: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<qc_core::Error> for CliError {
    fn from(e: qc_core::Error) -> Self {
        if e.is_divergence() {
            CliError::Divergence(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}
