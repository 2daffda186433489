use thiserror::Error;

/// Errors produced by detection, graph construction, generators and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// The permutation-null variance of a standardized count is zero at some
    /// candidate time, so the scan statistic is undefined there. Usually a
    /// sign of a pathological similarity graph (e.g. a complete graph).
    #[error("degenerate null variance at t = {t}{detail}")]
    DegenerateVariance { t: usize, detail: String },

    /// Wraps an error raised while processing one block of a blocking
    /// structure, so callers can tell which block failed.
    #[error("structure {structure_id}, block {block_id}: {source}")]
    Block {
        structure_id: usize,
        block_id: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_block(self, structure_id: usize, block_id: usize) -> Self {
        Error::Block {
            structure_id,
            block_id,
            source: Box::new(self),
        }
    }
}
