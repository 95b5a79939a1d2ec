use thiserror::Error;

use crate::rdp::RatePoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    /// `q` puts mass on a symbol (or synset) where the reference has none.
    #[error("support violation at index {index}: reference probability is zero")]
    SupportViolation { index: usize },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no channel on the grid satisfies distortion <= {distortion} and perception <= {perception}")]
    Infeasible { distortion: f64, perception: f64 },

    /// Carries the best iterate seen before giving up.
    #[error("solver did not converge within {iterations} iterations")]
    NotConverged {
        iterations: usize,
        best: Box<RatePoint>,
    },

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    #[error("symbol {symbol} at position {position} outside [{min}, {max}]")]
    SymbolOutOfRange {
        position: usize,
        symbol: i32,
        min: i32,
        max: i32,
    },

    #[error("truncated stream")]
    Truncated,

    #[error("corrupt stream: {0}")]
    Corrupt(String),

    #[error("bad magic bytes")]
    BadMagic,

    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported sample generator id {0}")]
    UnsupportedRng(u8),

    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },

    /// The context model tried to read a latent position that has not been decoded yet.
    #[error("context read of undecoded position (c={c}, h={h}, w={w})")]
    ContextViolation { c: usize, h: usize, w: usize },

    #[error("missing loss for level {0}")]
    MissingLevel(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_not_converged(&self) -> bool {
        matches!(self, Error::NotConverged { .. })
    }
}
