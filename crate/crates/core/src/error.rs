use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operator is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("not a density matrix: {0}")]
    NotDensityMatrix(String),

    #[error("negative temperature {0} (use a sign-reversed kernel instead)")]
    NegativeTemperature(f64),

    #[error("kernel pole at omega = 0")]
    FrequencyPole,

    #[error("kernel singularity at t = 0 (use principal-value sampling)")]
    TimeSingularity,

    #[error("frequency {omega} outside tabulated range [{lo}, {hi}]")]
    Extrapolation { omega: f64, lo: f64, hi: f64 },

    #[error("tabulated kernel is invalid: {0}")]
    InvalidTable(String),

    #[error("operation not supported for this kernel: {0}")]
    UnsupportedKernel(&'static str),

    #[error("no root in bracket [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },

    #[error("state does not commute with H (deviation {deviation:e}); use the grid correlator")]
    NotStationary { deviation: f64 },

    #[error("line spectra are not aligned")]
    Misaligned,

    #[error("too many observables: {0} (at most 4)")]
    TooManyObservables(usize),

    #[error("time step {dt} too coarse for |H| = {norm} (need dt <= 0.2/|H|)")]
    GridTooCoarse { dt: f64, norm: f64 },

    #[error("matrix is not symmetric (deviation {deviation:e})")]
    NotSymmetric { deviation: f64 },

    #[error("truncation guard violated: {0}")]
    TruncationGuard(String),

    #[error("observable is not linear in x and p")]
    Nonlinear,

    #[error("detector wavepacket reaches the grid boundary (|shift| = {shift}, L = {half_width})")]
    DetectorOverflow { shift: f64, half_width: f64 },

    #[error("undersampled: standard error {stderr:e} exceeds tolerance {tolerance:e}")]
    Undersampled { stderr: f64, tolerance: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
