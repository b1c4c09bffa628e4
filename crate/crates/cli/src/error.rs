use std::fmt;

use p300_core::Error as CoreError;

/// Exit status 2 for usage and input problems, 1 for failures during
/// computation.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    error: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        CliError { code: 2, error: error.into() }
    }

    pub fn compute(error: impl Into<anyhow::Error>) -> Self {
        CliError { code: 1, error: error.into() }
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }

    pub fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> Self {
        CliError {
            code: self.code,
            error: self.error.context(msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io { .. }
            | CoreError::MalformedHeader { .. }
            | CoreError::ChannelMismatch { .. }
            | CoreError::EventOutOfRange { .. }
            | CoreError::MalformedEvents(_)
            | CoreError::InvalidRecording(_)
            | CoreError::UnknownStimCode { .. }
            | CoreError::DuplicateOnset(_)
            | CoreError::InvalidArgument(_)
            | CoreError::Json(_)
            | CoreError::Csv(_) => CliError::usage(e),
            _ => CliError::compute(e),
        }
    }
}

pub fn usage_msg(msg: impl fmt::Display) -> CliError {
    CliError::usage(anyhow::anyhow!("{msg}"))
}

pub trait ResultExt<T> {
    fn ctx(self, msg: impl fmt::Display + Send + Sync + 'static) -> CliResult<T>;
}

impl<T, E: Into<CliError>> ResultExt<T> for Result<T, E> {
    fn ctx(self, msg: impl fmt::Display + Send + Sync + 'static) -> CliResult<T> {
        self.map_err(|e| e.into().context(msg))
    }
}

/// Output-side i/o failures count as computation errors.
pub fn write_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::compute(e)
}
