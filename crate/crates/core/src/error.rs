use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate box ({x0}, {y0}, {x1}, {y1})")]
    DegenerateBox { x0: f64, y0: f64, x1: f64, y1: f64 },

    #[error("regression distances must be strictly positive, got {0:?}")]
    NonPositiveDistance([f64; 4]),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed {what} in {path}: {msg}")]
    Format {
        what: &'static str,
        path: PathBuf,
        msg: String,
    },

    #[error("training diverged at step {step}: total loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("no sequences found in {0}")]
    EmptyDataset(PathBuf),

    #[error("results and dataset disagree on sequences: {0:?}")]
    SequenceMismatch(Vec<String>),

    #[error("io error on {path}: {source}")]
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

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
