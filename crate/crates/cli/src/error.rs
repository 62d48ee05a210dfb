use std::fmt;
use std::io;
use std::path::Path;

/// Exit codes shared by every subcommand.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MISSING_INPUT: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn format(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_FORMAT,
            message: message.into(),
        }
    }

    pub fn missing(path: &Path, err: io::Error) -> Self {
        CliError {
            code: EXIT_MISSING_INPUT,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<egoflow::Error> for CliError {
    fn from(e: egoflow::Error) -> Self {
        use egoflow::Error as E;
        let code = match &e {
            E::Io(_) | E::EmptyInput(_) => EXIT_MISSING_INPUT,
            E::InvalidArgument(_) => EXIT_USAGE,
            E::Numeric(_) => EXIT_NUMERIC,
            _ => EXIT_FORMAT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

/// Attaches the path to I/O failures so the message says which file.
pub trait Context<T> {
    fn at(self, path: &Path) -> Result<T, CliError>;
}

impl<T> Context<T> for egoflow::Result<T> {
    fn at(self, path: &Path) -> Result<T, CliError> {
        self.map_err(|e| {
            let mut err = CliError::from(e);
            err.message = format!("{}: {}", path.display(), err.message);
            err
        })
    }
}
