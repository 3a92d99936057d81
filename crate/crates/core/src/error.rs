//! Error types shared across the crate.

use thiserror::Error;

/// Failure categories surfaced by the library.
///
/// The CLI maps these onto distinct process exit codes, so the category a
/// constructor picks is part of the public contract: `Config` for invalid
/// settings or shape mismatches, `Data` for bad datasets or labels,
/// `Numeric` for non-finite values produced at runtime, and `Degenerate`
/// for estimators called with too few samples.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure in {stage}: {detail}")]
    Numeric { stage: String, detail: String },
    #[error("estimator degeneracy: {0}")]
    Degenerate(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            stage: stage.into(),
            detail: detail.into(),
        }
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    /// Prefixes the message with context while keeping the category, so
    /// callers (e.g. sweep runners) can annotate failures without
    /// changing how they map to exit codes.
    pub fn annotate(self, ctx: &str) -> Self {
        match self {
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Data(m) => Error::Data(format!("{ctx}: {m}")),
            Error::Numeric { stage, detail } => Error::Numeric {
                stage,
                detail: format!("{ctx}: {detail}"),
            },
            Error::Degenerate(m) => Error::Degenerate(format!("{ctx}: {m}")),
            Error::Io(e) => Error::Data(format!("{ctx}: i/o error: {e}")),
        }
    }
}
