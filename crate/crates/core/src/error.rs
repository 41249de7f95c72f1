use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A working point or processing parameter violates its invariant.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A beat frequency at or above Nyquist cannot be synthesized.
    #[error("beat frequency {beat_hz:.1} Hz aliases at sampling rate {sampling_rate_hz:.1} Hz")]
    Aliasing { beat_hz: f64, sampling_rate_hz: f64 },

    /// Sample counts or spectrum shapes do not line up.
    #[error("framing error: {0}")]
    Framing(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    /// Two ramps with identical slopes cannot be solved for (R, v).
    #[error("degenerate ramp pair: slopes are equal ({0} Hz/s)")]
    DegeneratePair(f64),

    #[error("no peak: spectrum window carries no energy")]
    NoPeak,

    #[error("noise model fit failed: {0}")]
    Fit(String),

    /// Value outside the logarithmic model domain.
    #[error("{field} must be strictly positive, got {value}")]
    Domain { field: &'static str, value: f64 },

    /// The searched range holds no distance satisfying the reliability condition.
    #[error("no reliable distance found below {search_max_m} m")]
    Unbounded { search_max_m: f64 },

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
