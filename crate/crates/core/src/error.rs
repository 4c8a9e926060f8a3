use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported dimension {0} (expected 1 or 2)")]
    UnsupportedDimension(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("spectral strategy requires a translation-invariant, time-independent kernel")]
    StrategyMismatch,

    #[error("unstable time step: dt = {dt} exceeds the stability bound {bound}")]
    UnstableStep { dt: f64, bound: f64 },

    #[error("kernel has zero row sums; no finite stable time step exists")]
    DegenerateKernel,

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("trajectory does not cover [{start}, {end}]")]
    InsufficientCoverage { start: f64, end: f64 },

    #[error("step {h} is not a positive multiple of the lattice spacing {spacing}")]
    NonLatticeStep { h: f64, spacing: f64 },

    #[error("trajectory mismatch: {0}")]
    TrajectoryMismatch(String),

    #[error("window out of range: {0}")]
    WindowOutOfRange(String),

    #[error("under-resolved: {0}")]
    UnderResolved(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
