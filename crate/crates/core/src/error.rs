use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid depth {depth}: must be finite and > 0")]
    InvalidDepth { depth: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rigid motion: {0}")]
    InvalidMotion(String),
    #[error("invalid field value: {0}")]
    InvalidValue(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("no valid pixels in loss support")]
    NoValidPixels,
    #[error("forward translation |t3| = {t3} too small for the divergence relation")]
    LateralMotionDegeneracy { t3: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("run diverged at iteration {iteration} (loss {loss})")]
    Diverged {
        iteration: usize,
        loss: f64,
        trace: Box<crate::optim::RunTrace>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Failures while decoding one of the on-disk formats.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic tag {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing data: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },
    #[error("dimensions {width}x{height} out of range")]
    DimensionOverflow { width: i64, height: i64 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("malformed scene file line {line}: {message}")]
    SceneFile { line: usize, message: String },
}
