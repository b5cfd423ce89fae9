use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box coordinates: {0}")]
    CoordinateOrder(String),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid label {0}, expected 0 or 1")]
    Label(u8),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampling exhausted: {0}")]
    SamplingExhausted(String),

    #[error("batch composition failed: {0}")]
    Composition(String),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("box {index}: {source}")]
    AtBox {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: parse error at byte offset {offset} (line {line}): {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        offset: usize,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("{context}: {err}")]
    Io { context: String, err: std::io::Error },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            err: source,
        }
    }

    pub(crate) fn at_box(index: usize, source: Error) -> Self {
        Error::AtBox {
            index,
            source: Box::new(source),
        }
    }
}
