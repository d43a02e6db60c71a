use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor dimensions.
    #[error("dimension error: {0}")]
    Shape(String),

    /// A caller broke an operation's precondition.
    #[error("contract error: {msg}")]
    Contract { module: &'static str, msg: String },

    /// A value lies outside the domain where a loss is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("spec error: {0}")]
    Spec(String),

    /// Logits or gradients requested from a label-only classifier.
    #[error("access-policy error: {0}")]
    Access(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },

    #[error("missing required config field `{field}`")]
    MissingField { field: String },

    #[error("config key `{key}`: expected {expected}, got `{value}`")]
    TypeMismatch {
        key: String,
        expected: &'static str,
        value: String,
    },

    #[error("corrupt header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },

    #[error("label {label} out of range for {classes} classes in {path}")]
    LabelOutOfRange {
        path: PathBuf,
        label: usize,
        classes: usize,
    },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("degenerate channel {channel}: zero standard deviation")]
    DegenerateChannel { channel: usize },

    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: String,
        epoch: usize,
        batch: usize,
    },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Contract violation raised by `module`.
    pub(crate) fn contract(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract {
            module,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Name of the subsystem that raised the error, used to prefix CLI output.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Contract { module, .. } => module,
            Error::Shape(_) => "diffcore",
            Error::Spec(_) | Error::Access(_) => "models",
            Error::Domain(_) | Error::NonFinite { .. } | Error::Diverged { .. } => "pgn-train",
            Error::Config(_)
            | Error::UnknownKey { .. }
            | Error::MissingField { .. }
            | Error::TypeMismatch { .. }
            | Error::CorruptHeader { .. }
            | Error::LabelOutOfRange { .. }
            | Error::Truncated { .. }
            | Error::CorruptCheckpoint { .. }
            | Error::DegenerateChannel { .. }
            | Error::Io { .. } => "data-io",
        }
    }
}
