use std::fmt;

use delaynet::Error;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Runtime(String),
    Correctness(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Correctness(_) => 4,
        }
    }

    /// Wraps a library error with the path or step it concerns.
    pub fn context(e: Error, what: impl fmt::Display) -> Self {
        let msg = format!("{what}: {e}");
        match e {
            Error::InvalidConfig(_) | Error::ConfigParse(_) => CliError::Validation(msg),
            _ => CliError::Runtime(msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
            CliError::Correctness(m) => write!(f, "correctness check failed: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::ConfigParse(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
