use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("coordinates {0:?} outside [0, 1]")]
    OutOfRange([f64; 4]),
    #[error("inverted box {0:?}")]
    Inverted([f64; 4]),
    #[error("degenerate image dimensions {width}x{height}")]
    DegenerateImage { width: f64, height: f64 },
    #[error("inverted pixel rectangle {0:?}")]
    InvertedPixels([f64; 4]),
    #[error("pixel rectangle {rect:?} outside a {width}x{height} image")]
    PixelsOutOfBounds {
        rect: [f64; 4],
        width: f64,
        height: f64,
    },
    #[error("union of an empty box list")]
    EmptyUnion,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NotationError {
    #[error("span text contains an ASCII double quote: {0:?}")]
    QuoteInText(String),
    #[error("span text is empty")]
    EmptyText,
    #[error("span text contains a line break: {0:?}")]
    LineBreak(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("line {line}: token {token}: {source}")]
    TokenBox {
        line: usize,
        token: usize,
        #[source]
        source: GeometryError,
    },
    #[error("line {line}: token {token}: empty text")]
    EmptyToken { line: usize, token: usize },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DedupError {
    #[error("duplicate id {0:?} in dedup input")]
    DuplicateId(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unresolved placeholder {0}")]
    Unresolved(String),
    #[error("task {task} has no templates")]
    EmptyTask { task: String },
    #[error("{task} template lacks required placeholder {placeholder}: {template:?}")]
    MissingPlaceholder {
        task: String,
        placeholder: String,
        template: String,
    },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("document {0:?} has no usable tokens")]
    EmptyDocument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("conversation structure: {0}")]
    Structure(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("client configuration: {0}")]
    Config(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("transport failure after {attempts} attempts: {last}")]
    Transport { attempts: usize, last: String },
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("service returned an empty completion")]
    EmptyResponse,
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ClientError::Transient(_))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("benchmark record {0:?} has no answers")]
    NoAnswers(String),
    #[error("duplicate benchmark qid {0:?}")]
    DuplicateBenchmark(String),
    #[error("duplicate response qid {0:?}")]
    DuplicateResponse(String),
    #[error("responses reference unknown qids: {}", .0.join(", "))]
    UnknownQids(Vec<String>),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

/// Pipeline-level error; [`Error::exit_code`] maps it onto the CLI contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Ingest {
        path: PathBuf,
        #[source]
        source: IngestError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Dedup(#[from] DedupError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Client(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
