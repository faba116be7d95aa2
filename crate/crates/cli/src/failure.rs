use std::fmt;
use std::process::ExitCode;

use icu_core::Error;

/// Process exit statuses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// Gradient check or other runtime failure.
    Failed = 1,
    Config = 2,
    MissingData = 3,
    Shape = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub message: String,
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn new(status: Status, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Status::Config, message)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.status as u8)
    }

    /// Classifies an error raised while reading a dataset.
    pub fn data(context: &str, err: Error) -> Self {
        let status = match err {
            Error::Io { .. }
            | Error::WrongMagic { .. }
            | Error::Truncated { .. }
            | Error::CountMismatch { .. }
            | Error::Csv { .. } => Status::MissingData,
            Error::ShapeMismatch { .. } => Status::Shape,
            Error::InvalidParameter { .. } | Error::ClassOutOfRange { .. } | Error::InsufficientSamples { .. } => {
                Status::Config
            }
            _ => Status::Failed,
        };
        Self::new(status, format!("{context}: {err}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Errors outside data loading: shape problems keep their status, invalid
/// parameters are configuration errors, everything else is a runtime failure.
impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let status = match err {
            Error::ShapeMismatch { .. } => Status::Shape,
            Error::InvalidParameter { .. } => Status::Config,
            _ => Status::Failed,
        };
        Self::new(status, err.to_string())
    }
}

pub fn io_failure(path: &std::path::Path, err: std::io::Error) -> Failure {
    Failure::new(Status::Failed, format!("{}: {err}", path.display()))
}
