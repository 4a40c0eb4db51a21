use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: query dim {query}, document dim {doc}")]
    DimMismatch { query: usize, doc: usize },

    #[error("NaN input at row {row}, column {col}")]
    NanInput { row: usize, col: usize },

    #[error("embedding dimension must be positive")]
    ZeroDim,

    #[error("document {0} has no valid tokens")]
    EmptyDocument(usize),

    #[error("batch contains no documents")]
    EmptyBatch,

    #[error("invalid tile configuration: {0}")]
    BadTileConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("CSR does not match the gradient shapes: {0}")]
    StaleCsr(String),

    #[error("argmin does not match the point sets: {0}")]
    StaleArgmin(String),

    #[error("k = {k} exceeds corpus size {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("bad magic {0:?}, expected \"MXS1\"")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    VersionUnsupported(u16),

    #[error("unknown {kind} tag {tag}")]
    BadTag { kind: &'static str, tag: u8 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
}

impl Error {
    /// Stable variant name, used in machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimMismatch { .. } => "DimMismatch",
            Error::NanInput { .. } => "NaNInput",
            Error::ZeroDim => "ZeroDim",
            Error::EmptyDocument(_) => "EmptyDocument",
            Error::EmptyBatch => "EmptyBatch",
            Error::BadTileConfig(_) => "BadTileConfig",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::StaleCsr(_) => "StaleCsr",
            Error::StaleArgmin(_) => "StaleArgmin",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::InvalidStep(_) => "InvalidStep",
            Error::InvalidValue(_) => "InvalidValue",
            Error::Io(_) => "IoError",
            Error::BadMagic(_) => "BadMagic",
            Error::VersionUnsupported(_) => "VersionUnsupported",
            Error::BadTag { .. } => "BadTag",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
        }
    }
}
