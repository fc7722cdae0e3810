use thiserror::Error;

/// Errors raised by the solvers and simulators.
///
/// Assumption violations that are reported as data (see
/// [`crate::game::AssumptionReport`]) are not errors; these variants are for
/// conditions that stop a computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    NotHurwitz { abscissa: f64 },

    #[error("matrix exponential overflow (norm {norm:.3e})")]
    ExpOverflow { norm: f64 },

    #[error("no {expected}-dimensional stable invariant subspace: {detail}")]
    NoStableSubspace { expected: usize, detail: String },

    #[error("PSD/SPD violation at node {node} (min eigenvalue {min_eig:.3e}); refine the time grid")]
    DefinitenessLost { node: usize, min_eig: f64 },

    #[error("residual {residual:.3e} exceeds tolerance {tolerance:.3e}: {what}")]
    Residual {
        what: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("iteration did not converge after {iterations} steps (last change {last_change:.3e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("{0}")]
    Fit(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
