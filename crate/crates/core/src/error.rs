//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input failed a precondition (non-finite value, bad range, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A leg Jacobian was too ill-conditioned to invert.
    #[error("singular leg configuration: {0}")]
    SingularConfiguration(String),
    /// A filter step produced a non-finite or non-invertible quantity.
    #[error("numerical failure{}: {msg}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    NumericalFailure {
        /// Description of what failed.
        msg: String,
        /// Frame index, when the failure happened inside a dataset run.
        frame: Option<usize>,
    },
    /// A scenario could not be realized (e.g. a foot target out of reach).
    #[error("scenario error at frame {frame}: {msg}")]
    Scenario {
        /// Frame at which generation failed.
        frame: usize,
        /// Description.
        msg: String,
    },
    /// Frames arrived out of time order.
    #[error("sequencing error: {0}")]
    Sequencing(String),
    /// Two series that must align (lengths, timestamps) do not.
    #[error("alignment error: {0}")]
    Alignment(String),
    /// A metric is undefined for the given input.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// A data file does not match its schema.
    #[error("schema error: {0}")]
    Schema(String),
    /// A run configuration is invalid.
    #[error("config error: {0}")]
    Config(String),
    /// Filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// CSV parse/serialize failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Shorthand for a frame-less numerical failure.
    pub fn numerical(msg: impl Into<String>) -> Error {
        Error::NumericalFailure {
            msg: msg.into(),
            frame: None,
        }
    }

    /// Attaches a frame index to a numerical failure.
    pub fn at_frame(self, frame: usize) -> Error {
        match self {
            Error::NumericalFailure { msg, .. } => Error::NumericalFailure {
                msg,
                frame: Some(frame),
            },
            other => other,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
