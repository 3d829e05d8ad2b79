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

    #[error("malformed embedding file at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("non-finite value in row {row} ({context})")]
    NonFinite { row: usize, context: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("no overlap between log items ({log_items}) and embedding items ({embedding_items})")]
    EmptyIntersection { log_items: usize, embedding_items: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
