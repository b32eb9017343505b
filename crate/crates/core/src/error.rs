use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// A value object failed an invariant check.
    #[error("validation error: {0}")]
    Validation(String),

    /// Revival times are undefined at zero field.
    #[error("no revivals: degenerate field")]
    DegenerateField,

    /// The extrema window does not span a full oscillation period.
    #[error("window shorter than one oscillation period")]
    WindowTooShort,

    /// Spectral estimation needs a uniformly sampled curve.
    #[error("non-uniform time grid: resample first")]
    NonUniformGrid,

    /// The spectrum has no peak above the noise floor.
    #[error("no oscillation detected")]
    NoOscillation,

    /// A curve or time grid with no points was supplied.
    #[error("empty time grid")]
    EmptyGrid,

    /// The fitted field is not significant against its own uncertainty.
    #[error("field indistinguishable from zero")]
    FieldIndistinguishable,

    /// Width calibration could not bracket or reach the target.
    #[error("calibration failed: {0}")]
    Calibration(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
