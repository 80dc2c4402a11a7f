use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("operation requires a periodic leaf (circle or torus)")]
    NotPeriodic,
    #[error("invalid spectral request: {0}")]
    InvalidSpectrum(String),
    #[error("symmetric eigensolver did not converge")]
    EigenSolverFailed,
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("blow-down: solution left the positive cone at t = {time}")]
    BlowDown { time: f64 },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("profile reconstruction: {0}")]
    Profile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
