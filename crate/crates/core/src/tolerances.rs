//! Numerical thresholds shared across the crate.
//!
//! Every threshold that decides a pass/fail or an SPD classification lives
//! here so that tests and reports quote the same numbers.

/// SPD test: `λ_min > SPD_RELATIVE · λ_max`.
pub const SPD_RELATIVE: f64 = 1e-12;

/// Relative residual tier for algebraic Riccati / linear solves.
pub const RESIDUAL_TIGHT: f64 = 1e-10;

/// Relative residual tier for cross-route agreement certificates.
pub const RESIDUAL_LOOSE: f64 = 1e-9;

/// Sylvester residual and `σ_min(M)` thresholds for the ergodic solvability check.
pub const SYLVESTER_TOL: f64 = 1e-9;
pub const M_SIGMA_MIN_TOL: f64 = 1e-10;

/// Symmetry tolerance (relative) for `Q^i` blocks.
pub const SYMMETRY_RELATIVE: f64 = 1e-12;

/// Relative zero-series threshold for deviation profiles.
pub const ZERO_SERIES_RELATIVE: f64 = 1e-14;

/// Floor applied to series values before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-30;

/// Monte Carlo acceptance band in standard errors.
pub const MC_SIGMAS: f64 = 3.0;

/// Picard fallback for the forward-backward system.
pub const PICARD_DAMPING: f64 = 0.5;
pub const PICARD_TOL: f64 = 1e-10;
pub const PICARD_MAX_ITER: usize = 500;

/// Log-spaced grid used to measure exponential envelope constants.
pub const ENVELOPE_GRID_POINTS: usize = 64;
pub const ENVELOPE_T_MIN: f64 = 1e-3;
pub const ENVELOPE_T_MAX: f64 = 1e2;
