use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("symbol {symbol:?} at byte offset {offset} is not in the alphabet")]
    UnknownSymbol { symbol: String, offset: usize },

    #[error("subword id {0} is not in the vocabulary")]
    UnknownId(u32),

    #[error("cutoff {cutoff} exceeds the {available} available merges")]
    CutoffOutOfRange { cutoff: usize, available: usize },

    #[error("window {window} around cutoff {cutoff} needs ranks {lo}..={hi}, but only 1..={available} exist")]
    InfeasibleWindow {
        cutoff: usize,
        window: usize,
        lo: i64,
        hi: usize,
        available: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("context has zero probability mass")]
    ZeroMassContext,

    #[error("{0} backend cannot answer arbitrary context queries")]
    ContextQueryUnsupported(&'static str),

    #[error("no external log-prob for document {doc}, position {pos}")]
    MissingLogProb { doc: u64, pos: u64 },

    #[error("external log-prob for document {doc}, position {pos} has id {found}, token stream has {expected}")]
    MisalignedLogProb {
        doc: u64,
        pos: u64,
        expected: u32,
        found: u32,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("regression design is rank deficient: {0}")]
    RankDeficient(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid vocabulary file: {0}")]
    InvalidVocabulary(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("document {doc}: {source}")]
    Document {
        doc: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_document(self, doc: usize) -> Self {
        Error::Document {
            doc,
            source: Box::new(self),
        }
    }
}
