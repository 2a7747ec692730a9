use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Input,
    Metric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header in {what}: {detail}")]
    MalformedHeader { what: String, detail: String },

    #[error("payload size mismatch: header declares {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("negative amplitude {value} at index {index}")]
    NegativeValue { index: usize, value: f32 },

    #[error("degenerate dimensions {width}x{height}")]
    DegenerateDimensions { width: usize, height: usize },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("png decode error: {0}")]
    Png(String),

    #[error("json error in {what}: {source}")]
    Json {
        what: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("image is already normalized")]
    AlreadyNormalized,

    #[error("values outside [0, 1]: {0}")]
    NotNormalized(String),

    #[error("normalization denominator mu + k*sigma = {0} is not positive")]
    ZeroDenominator(f64),

    #[error("all {0} pixels are saturated; density is undefined")]
    FullySaturated(u64),

    #[error("histogram bin layout mismatch: {0} vs {1} bins")]
    BinMismatch(usize, usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("co-occurrence offset ({dx}, {dy}) leaves no in-bounds pairs in a {size}x{size} patch")]
    NoPairs { dx: i64, dy: i64, size: usize },

    #[error("zero-norm embedding row {row} ({id})")]
    ZeroNorm { row: usize, id: String },

    #[error("duplicate name `{0}`")]
    Duplicate(String),

    #[error("tensor `{name}`: byte range [{begin}, {end}) overlaps another tensor")]
    Overlap { name: String, begin: usize, end: usize },

    #[error("truncated payload: tensor `{name}` ends at {end}, payload holds {len} bytes")]
    Truncated { name: String, end: usize, len: usize },

    #[error("unsupported dtype `{0}`")]
    UnsupportedDtype(String),

    #[error("shape mismatch for `{name}`: {before:?} vs {after:?}")]
    ShapeMismatch {
        name: String,
        before: Vec<usize>,
        after: Vec<usize>,
    },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(what: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            what: what.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::UnknownLabel(_) | Error::InvalidParameter(_) => {
                ErrorKind::Config
            }
            Error::FullySaturated(_)
            | Error::BinMismatch(..)
            | Error::NoPairs { .. }
            | Error::ZeroDenominator(_) => ErrorKind::Metric,
            _ => ErrorKind::Input,
        }
    }
}
