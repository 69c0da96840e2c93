//! Error kinds and their process exit codes.

use std::fmt;
use std::path::Path;

use depprobe::analysis::AnalysisError;
use depprobe::decode::DecodeError;
use depprobe::embstore::EmbeddingError;
use depprobe::eval::EvalError;
use depprobe::pipeline::PredictError;
use depprobe::probe::ProbeError;
use depprobe::train::TrainError;
use depprobe::treebank::TreebankError;

/// Failure class of a command. Each class has its own exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Format,
    Alignment,
    Numeric,
    Argument,
    Compatibility,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Internal => 1,
            ErrorKind::Io => 3,
            ErrorKind::Format => 4,
            ErrorKind::Alignment => 5,
            ErrorKind::Numeric => 6,
            ErrorKind::Argument => 7,
            ErrorKind::Compatibility => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn argument(message: impl Into<String>) -> Self {
        CliError::new(ErrorKind::Argument, message)
    }

    pub fn compatibility(message: impl Into<String>) -> Self {
        CliError::new(ErrorKind::Compatibility, message)
    }

    /// Prefix the message with the file it concerns.
    pub fn at(self, path: &Path) -> Self {
        CliError {
            kind: self.kind,
            message: format!("{}: {}", path.display(), self.message),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Attach a path to errors of any convertible type.
pub trait PathContext<T> {
    fn at(self, path: &Path) -> Result<T, CliError>;
}

impl<T, E: Into<CliError>> PathContext<T> for Result<T, E> {
    fn at(self, path: &Path) -> Result<T, CliError> {
        self.map_err(|e| e.into().at(path))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(ErrorKind::Io, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        let kind = if e.is_io() { ErrorKind::Io } else { ErrorKind::Format };
        CliError::new(kind, e.to_string())
    }
}

impl From<TreebankError> for CliError {
    fn from(e: TreebankError) -> Self {
        let kind = match e {
            TreebankError::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Format,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        let kind = match e {
            EmbeddingError::Io { .. } => ErrorKind::Io,
            EmbeddingError::Format(_) => ErrorKind::Format,
            EmbeddingError::Data { .. } => ErrorKind::Numeric,
            EmbeddingError::Alignment { .. } => ErrorKind::Alignment,
            EmbeddingError::Argument(_) => ErrorKind::Argument,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        let kind = match e {
            ProbeError::Io(_) => ErrorKind::Io,
            ProbeError::Checkpoint(_) => ErrorKind::Format,
            ProbeError::Dimension(_) => ErrorKind::Compatibility,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Embedding(inner) => inner.into(),
            TrainError::Numeric(_) => CliError::new(ErrorKind::Numeric, e.to_string()),
            TrainError::Argument(_) | TrainError::Config(_) => CliError::argument(e.to_string()),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Treebank(inner) => inner.into(),
            DecodeError::Shape(_) => CliError::compatibility(e.to_string()),
            DecodeError::Empty | DecodeError::InvalidTree(_) => CliError::new(ErrorKind::Format, e.to_string()),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Incompatible(_) => CliError::compatibility(e.to_string()),
            PredictError::Probe(inner) => inner.into(),
            PredictError::Decode(inner) => inner.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let kind = match e {
            EvalError::Alignment(_) => ErrorKind::Alignment,
            EvalError::Unlabeled => ErrorKind::Argument,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        let kind = match e {
            AnalysisError::Argument(_) | AnalysisError::Lookup(_) => ErrorKind::Argument,
            AnalysisError::Degenerate(_) | AnalysisError::Rank(_) => ErrorKind::Numeric,
            AnalysisError::Format(_) => ErrorKind::Format,
            AnalysisError::Io(_) => ErrorKind::Io,
        };
        CliError::new(kind, e.to_string())
    }
}
