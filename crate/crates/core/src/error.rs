use thiserror::Error;

/// Errors produced by the decompression library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel ({x}, {y}) outside {width}x{height} sensor")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("invalid time window [{t0}, {t1})")]
    InvalidWindow { t0: f64, t1: f64 },

    #[error("time {t} outside span [{begin}, {end}]")]
    OutOfSpan { t: f64, begin: f64, end: f64 },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("no events available: {0}")]
    NoEvents(String),

    #[error("{0} is not implemented (requires pretrained deep features)")]
    NotImplemented(&'static str),

    #[error("malformed {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_) | Error::NonFinite { .. } | Error::NotImplemented(_)
        )
    }

    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
