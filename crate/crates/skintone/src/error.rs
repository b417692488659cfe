//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {source}")]
    ImageDecode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("manifest parse error at line {line}: {message}")]
    ManifestParse { line: usize, message: String },

    #[error("duplicate (subject_id, sample_id) pair (\"{subject_id}\", \"{sample_id}\") at line {line}")]
    DuplicateSample {
        subject_id: String,
        sample_id: String,
        line: usize,
    },

    #[error("manifest contains no samples")]
    EmptyManifest,

    #[error("invalid {region} polygon: {reason}")]
    InvalidPolygon { region: String, reason: String },

    #[error("{region} polygon exceeds image bounds {width}x{height}")]
    PolygonOutOfBounds {
        region: String,
        width: u32,
        height: u32,
    },

    #[error("{region} region has {found} interior pixels, need at least {required}")]
    TooFewPixels {
        region: String,
        found: usize,
        required: usize,
    },

    #[error("smoothing kernel must be odd, got {kernel}")]
    EvenKernel { kernel: usize },

    #[error("empty ITA map")]
    EmptyItaMap,

    #[error("no region values to average")]
    NoRegions,

    #[error("need at least {required} faces to fit, got {found}")]
    TooFewFaces { found: usize, required: usize },

    #[error("zero-variance input: all face vectors are identical")]
    ZeroVariance,

    #[error("matrix is all zeros")]
    AllZeroMatrix,

    #[error("invalid factorization input: {reason}")]
    InvalidMatrix { reason: String },

    #[error("patch has {found} pixels, factorization needs at least {required}")]
    PatchTooSmall { found: usize, required: usize },

    #[error("basis column {index} is zero; cannot classify components")]
    ZeroBasisColumn { index: usize },

    #[error("need at least {required} features to fit, got {found}")]
    TooFewFeatures { found: usize, required: usize },

    #[error("degenerate kernel: {reason}")]
    DegenerateKernel { reason: String },

    #[error("unsupported model version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("malformed model file: {message}")]
    ModelFormat { message: String },

    #[error("score table error: {message}")]
    ScoreTable { message: String },

    #[error("csv error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    CsvFormat { line: Option<usize>, message: String },

    #[error("no subject has two or more samples")]
    NoRepeatedSubjects,

    #[error("need at least {required} scores, got {found}")]
    NotEnoughScores { found: usize, required: usize },

    #[error("quantile bin count must be at least 2, got {0}")]
    BadQuantileCount(usize),

    #[error("no rows carry a group label")]
    NoLabeledRows,

    #[error("invalid synth spec field `{field}`: {reason}")]
    InvalidSpec { field: String, reason: String },

    #[error("missing model for cell (train={train}, test={test}, metric={metric})")]
    MissingCell {
        train: String,
        test: String,
        metric: String,
    },

    #[error("{failed} of {total} samples failed, exceeding the limit of {limit}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit: usize,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
