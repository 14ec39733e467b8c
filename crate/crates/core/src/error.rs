use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: unsupported image format ({reason})")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("{path}: truncated file")]
    Truncated { path: PathBuf },
    #[error("{path}: zero-area image")]
    ZeroArea { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed file ({reason})")]
    Malformed { path: PathBuf, reason: String },
    #[error("crop window {w}x{h} at ({x0}, {y0}) exceeds {width}x{height} image")]
    CropOutOfBounds {
        x0: usize,
        y0: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("cannot downsample {src_w}x{src_h} to larger {dst_w}x{dst_h}")]
    UpsampleRequested {
        src_w: usize,
        src_h: usize,
        dst_w: usize,
        dst_h: usize,
    },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("degenerate split ratios {0:?}")]
    DegenerateRatios([f64; 3]),
    #[error("coverage {target} unreachable: {reason}")]
    UnreachableCoverage { target: f64, reason: String },
    #[error("bracket [{lo}, {hi}] gives coverages [{cov_lo}, {cov_hi}] which do not straddle target {target}")]
    Bracket {
        lo: f64,
        hi: f64,
        cov_lo: f64,
        cov_hi: f64,
        target: f64,
    },
    #[error("empty mask")]
    EmptyMask,
    #[error("empty selection")]
    EmptySelection,
    #[error("scan path does not rasterize onto the scan mask")]
    PathMaskMismatch,
    #[error("image {height}x{width} smaller than {needed}x{needed} window")]
    ImageTooSmall {
        height: usize,
        width: usize,
        needed: usize,
    },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("degenerate samples: {0}")]
    DegenerateSamples(&'static str),
    #[error("invalid loss {0}")]
    InvalidLoss(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
