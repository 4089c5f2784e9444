use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid header {path}: {message}")]
    Header { path: PathBuf, message: String },

    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    PayloadSize { expected: u64, found: u64 },

    #[error("malformed PGM: {0}")]
    Pgm(String),

    #[error("invalid dimensions: {0}")]
    Dimensions(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no informative bands")]
    NoInformativeBands,

    #[error("degenerate clustering input")]
    DegenerateClustering,

    #[error("degenerate table: {0}")]
    DegenerateTable(String),

    #[error("incomplete score cube: {0}")]
    IncompleteCube(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("{path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches the offending input file to an error that lacks it.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::Header { .. } | Error::Input { .. }) => e,
            other => Error::Input {
                path: path.into(),
                source: Box::new(other),
            },
        }
    }
}
