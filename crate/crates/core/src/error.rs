use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The requested compression ratio leaves no room for even one primitive.
    #[error(
        "compression ratio {cr} is too high for a {height}x{width} image \
         (maximum feasible ratio is {max_cr:.3})"
    )]
    BudgetTooSmall {
        height: usize,
        width: usize,
        cr: f64,
        max_cr: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("image of {height}x{width} is too small (need at least {min}x{min})")]
    ImageTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("need more than {k} points for a {k}-nearest-neighbour query, got {points}")]
    InsufficientPoints { points: usize, k: usize },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("bad magic bytes, not a splat file")]
    BadMagic,

    #[error("unsupported splat file version {0}")]
    UnsupportedVersion(u8),

    #[error("unknown storage mode byte {0}")]
    UnknownMode(u8),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("cannot encode an empty primitive set")]
    EmptySet,

    #[error("failed to read image {path}: {source}")]
    ImageRead {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("failed to write image {path}: {source}")]
    ImageWrite {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
