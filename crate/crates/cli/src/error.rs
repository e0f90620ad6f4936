use std::fmt;

use reefnet_core::cnn::{CnnError, ModelError};
use reefnet_core::dataset::DatasetError;
use reefnet_core::eval::EvalError;
use reefnet_core::features::FeatureError;
use reefnet_core::grid::GridError;
use reefnet_core::io::IoError;
use reefnet_core::preprocess::PreprocessError;

/// Failure category; each maps to one process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or network plan (exit 2).
    Config,
    /// Malformed or inconsistent data (exit 3).
    Data,
    /// File system failure (exit 4).
    Io,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Data,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Io,
            message: message.into(),
        }
    }

    /// Prefixes the message with where the failure happened.
    pub fn context(mut self, ctx: impl fmt::Display) -> Self {
        self.message = format!("{ctx}: {}", self.message);
        self
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Io => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn with_kind(kind: ErrorKind, e: impl fmt::Display) -> CliError {
    CliError {
        kind,
        message: e.to_string(),
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        with_kind(ErrorKind::Io, e)
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let kind = match e {
            IoError::File { .. } | IoError::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Data,
        };
        with_kind(kind, e)
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        let kind = match e {
            GridError::InvalidRange { .. } => ErrorKind::Config,
            _ => ErrorKind::Data,
        };
        with_kind(kind, e)
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        let kind = match e {
            PreprocessError::DegenerateHistogram { .. }
            | PreprocessError::ChannelCount(_)
            | PreprocessError::PointOutside { .. } => ErrorKind::Data,
            _ => ErrorKind::Config,
        };
        with_kind(kind, e)
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        let kind = match e {
            FeatureError::InvalidParameter(_) => ErrorKind::Config,
            _ => ErrorKind::Data,
        };
        with_kind(kind, e)
    }
}

impl From<CnnError> for CliError {
    fn from(e: CnnError) -> Self {
        let kind = match e {
            CnnError::EmptyClass(_) | CnnError::BadLabel { .. } | CnnError::Diverged { .. } => {
                ErrorKind::Data
            }
            _ => ErrorKind::Config,
        };
        with_kind(kind, e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(io) => io.into(),
            other => with_kind(ErrorKind::Data, other),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(io) => io.into(),
            DatasetError::Preprocess(p) => p.into(),
            DatasetError::Feature(f) => f.into(),
            DatasetError::InvalidSplit(_) => with_kind(ErrorKind::Config, e),
            other => with_kind(ErrorKind::Data, other),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(io) => io.into(),
            other => with_kind(ErrorKind::Data, other),
        }
    }
}
