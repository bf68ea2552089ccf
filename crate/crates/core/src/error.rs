use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("no frames in {0}")]
    NoFrames(PathBuf),
    #[error("inconsistent dimensions: expected {expected:?}, found {found:?}")]
    InconsistentDimensions {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("unsupported bit depth: {0}")]
    UnsupportedBitDepth(String),
    #[error("value {value} outside [0, 1]")]
    OutOfRange { value: f64 },
    #[error("input {height}x{width} smaller than required {required}")]
    TooSmall {
        height: usize,
        width: usize,
        required: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dimensions {height}x{width} not divisible by tile size {tile}")]
    NotDivisible {
        height: usize,
        width: usize,
        tile: usize,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated input")]
    Truncated,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("coded image is already normalized")]
    AlreadyNormalized,
    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Decode { .. } => "decode",
            Error::NoFrames(_) => "no_frames",
            Error::InconsistentDimensions { .. } => "inconsistent_dimensions",
            Error::UnsupportedBitDepth(_) => "unsupported_bit_depth",
            Error::OutOfRange { .. } => "out_of_range",
            Error::TooSmall { .. } => "too_small",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NotDivisible { .. } => "not_divisible",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::BadMagic => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Truncated => "truncated",
            Error::ChecksumMismatch { .. } => "checksum_mismatch",
            Error::AlreadyNormalized => "already_normalized",
            Error::DegenerateStatistics(_) => "degenerate_statistics",
            Error::Empty(_) => "empty",
        }
    }
}
