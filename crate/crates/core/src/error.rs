use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid too coarse: got {got}, need at least {min}")]
    GridTooCoarse { got: usize, min: usize },
    #[error("growth rate is not strictly positive at s = {at} (gamma = {value})")]
    NonPositiveGrowth { at: f64, value: f64 },
    #[error("negative {which} rate at {at:?} (value {value})")]
    NegativeRate { which: &'static str, at: (f64, f64), value: f64 },
    #[error("malformed table: {0}")]
    MalformedTable(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("point outside the domain: {0}")]
    OutOfDomain(String),
    #[error("history weight degenerates (max sampled value {max:e})")]
    DegenerateWeight { max: f64 },
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("no characteristic root in [-50, 50]; best radius reached {best_radius}")]
    NoRoot { best_radius: f64 },
    #[error("time step mismatch: expected {expected}, got {got}")]
    StepMismatch { expected: f64, got: f64 },
    #[error("horizon {t} exceeds the allowed maximum {max}")]
    HorizonTooLong { t: f64, max: f64 },
    #[error("time {t} lies outside the stored window [{lo}, {hi}]")]
    OutOfWindow { t: f64, lo: f64, hi: f64 },
    #[error("CFL/positivity condition violated: {0}")]
    CflViolation(String),
    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),
    #[error("model is not critical: spectral radius {radius}")]
    NotCritical { radius: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

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
