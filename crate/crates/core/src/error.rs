use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DrrError>;

#[derive(Debug, Error)]
pub enum DrrError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("header is missing required field `{0}`")]
    MissingField(String),

    #[error("malformed header field `{field}`: {reason}")]
    InvalidHeader { field: String, reason: String },

    #[error("payload is {actual} bytes but the header declares {expected}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("unsupported element kind `{0}`")]
    UnsupportedElementKind(String),

    #[error("volume orientation is not axis aligned: {0}")]
    NonAxisAligned(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("expected {expected} values, found {found}")]
    WrongValueKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("expected a {expected} image, found {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("volume spacing is not isotropic: {0:?}")]
    AnisotropicVolume([f64; 3]),

    #[error("degenerate projection geometry: {0}")]
    DegenerateGeometry(String),

    #[error("preview window [{lo}, {hi}] is empty")]
    EmptyWindow { lo: f64, hi: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("transform determinant {0} outside [0.25, 4.0]")]
    DegenerateDeterminant(f64),

    #[error("region of interest is empty: {0}")]
    EmptyRoi(String),

    #[error("candidate list is empty")]
    EmptyCandidateList,

    #[error("only one class present ({n_pos} positive, {n_neg} negative)")]
    SingleClass { n_pos: usize, n_neg: usize },

    #[error("score {0} is not finite")]
    NonFiniteScore(f64),

    #[error("no registration candidate succeeded: {0}")]
    NoCandidateSucceeded(String),

    #[error("mask contains non-binary value {0}")]
    NonBinaryMask(u8),

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("configuration error: {0}")]
    Config(String),
}

impl DrrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DrrError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        DrrError::Json {
            context: context.into(),
            source,
        }
    }
}
