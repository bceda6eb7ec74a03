use thiserror::Error;

/// Errors produced by the estimation and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The normal matrix `GᵀG` is singular or too badly conditioned to invert.
    #[error("singular geometry: {sat_count} satellites, condition number {condition:.3e}")]
    SingularGeometry { sat_count: usize, condition: f64 },

    /// Ambiguity resolution needs a positive carrier wavelength.
    #[error("carrier wavelength is zero; ambiguities cannot be resolved")]
    WavelengthZero,

    /// A Bayes covariance prediction was requested without an `h` value.
    #[error("Bayes covariance prediction requires an h value")]
    MissingH,

    /// No closed-form covariance prediction exists for this method.
    #[error("no asymptotic covariance prediction for method {0}")]
    NoPrediction(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Resampling a degenerate constellation failed repeatedly.
    #[error("geometry resampling exhausted after {attempts} attempts at {sat_count} satellites")]
    ResampleExhausted { sat_count: usize, attempts: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
