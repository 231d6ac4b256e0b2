use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("zero-norm vector{}", fmt_row(*.row))]
    ZeroVector { row: Option<usize> },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("matrix has no rows")]
    EmptyMatrix,

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic in {path}: expected \"PKNNEMB1\"")]
    BadMagic { path: PathBuf },

    #[error("unsupported dtype code {code} in {path}")]
    BadDtype { path: PathBuf, code: u8 },

    #[error("reserved header bytes are not zero in {path}")]
    BadReserved { path: PathBuf },

    #[error("{path}: file length {actual} does not match header promise of {expected} bytes")]
    TruncatedFile { path: PathBuf, expected: u64, actual: u64 },

    #[error("{path}: header declares {requested} payload bytes, above the {cap} byte cap")]
    HeaderTooLarge { path: PathBuf, requested: u64, cap: u64 },

    #[error("{path}: non-finite payload value at row {row}, column {col}")]
    NonFinitePayload { path: PathBuf, row: usize, col: usize },

    #[error("count mismatch in {path}: manifest says {expected}, file has {actual}")]
    CountMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("dimension mismatch in {path}: manifest says {expected}, file has {actual}")]
    FileDimMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{path}:{line}: {message}")]
    MalformedJsonLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid manifest {path}: {message}")]
    BadManifest { path: PathBuf, message: String },

    #[error("corpus row {row} is not unit-norm (norm {norm}) although the manifest says normalized")]
    NotNormalized { row: usize, norm: f64 },

    #[error("row count mismatch: {left} vs {right}")]
    RowCountMismatch { left: usize, right: usize },

    #[error("vocabulary filter mode {0} needs vocabulary inputs")]
    MissingVocabulary(&'static str),

    #[error("variant {0} needs caption embeddings")]
    MissingCaptions(String),

    #[error("row {row}: {source}")]
    InRow {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_row(row: Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn in_row(self, row: usize) -> Self {
        Error::InRow {
            row,
            source: Box::new(self),
        }
    }

    /// True when the failure came from the filesystem rather than from the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::InRow { source, .. } => source.is_io(),
            _ => false,
        }
    }

    /// The innermost error, stripping row context.
    pub fn root(&self) -> &Error {
        match self {
            Error::InRow { source, .. } => source.root(),
            e => e,
        }
    }
}
