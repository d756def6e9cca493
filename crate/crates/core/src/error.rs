use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("duplicate document id `{0}`")]
    DuplicateId(String),

    #[error("missing score for document `{doc_id}` under scorer `{scorer}`")]
    MissingScore { doc_id: String, scorer: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("judge error: {message} (response: {raw:?})")]
    Judge { message: String, raw: String },

    #[error("parse error: {message} (response: {raw:?})")]
    Parse { message: String, raw: String },

    #[error("empty rephrase")]
    EmptyRephrase,

    #[error("unresolved placeholder {{{0}}}")]
    MissingBinding(String),

    #[error("service error: {0}")]
    Service(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
