//! Stochastic linear-quadratic (LQ) optimal control with regime switching.
//!
//! The toolkit solves finite- and infinite-horizon LQ problems whose
//! coefficients `(A, B, C, D, Q, S, R)` switch according to a finite-state
//! continuous-time Markov chain with generator `(λ_ιȷ)`:
//!
//! ```text
//! dX(s) = [A(α)X + B(α)u] ds + [C(α)X + D(α)u] dW(s)
//! J     = E ∫ ½ ( ⟨Q(α)X, X⟩ + 2⟨S(α)X, u⟩ + ⟨R(α)u, u⟩ ) ds
//! ```
//!
//! The finite-horizon optimum is given by a family of coupled differential
//! Riccati equations (one symmetric matrix per regime, coupled through the
//! chain generator), the infinite-horizon optimum by the corresponding
//! algebraic Riccati equations. For large horizons the finite-horizon
//! Riccati solutions, feedback gains, and optimal trajectories converge
//! exponentially to their stationary counterparts; this crate computes all
//! of those objects and verifies the exponential estimates numerically, by
//! exact second-moment propagation and by Monte Carlo simulation.
//!
//! Module map:
//! - [`model`]: problem data, assumption checks, stage cost, feedback shifts
//! - [`markov`]: generator coupling `Λ[·]`, chain sampling, transition matrices
//! - [`riccati`]: coupled DRE/ARE solvers, gains, value functions
//! - [`stability`]: dissipativity certificates and mean-square moment dynamics
//! - [`simulate`]: Euler–Maruyama Monte Carlo with exact jump splitting
//! - [`turnpike`]: gap series, exponential-rate fits, and bound verification
//! - [`config`] / [`report`]: problem files and CSV / report emission

pub mod config;
pub mod linalg;
pub mod markov;
pub mod model;
pub mod ode;
pub mod presets;
pub mod report;
pub mod riccati;
pub mod simulate;
pub mod stability;
pub mod turnpike;

use thiserror::Error;

/// Crate-wide error type.
///
/// Structural problems (bad shapes, non-finite data) are distinct variants
/// from failed numerical checks so callers can map them to different exit
/// codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },
    #[error("non-finite entry in {context}")]
    NonFinite { context: String },
    #[error("{context}: matrix is singular in regime {regime} (smallest eigenvalue {min_eig:e})")]
    Singular {
        context: String,
        regime: usize,
        min_eig: f64,
    },
    #[error("problem fails validation: {0}")]
    InvalidProblem(String),
    #[error("certificate matrix is not positive definite in regime {regime} (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite { regime: usize, min_eig: f64 },
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("step limit exceeded at t = {t}")]
    StepLimit { t: f64 },
    #[error("regularity margin lost at t = {t} (min eigenvalue of R + DᵀPD = {margin:e})")]
    RegularityLost { t: f64, margin: f64 },
    #[error("horizon cap reached at t = {t_max} with residual {residual:e}; instance may not be stabilizable")]
    HorizonCap { t_max: f64, residual: f64 },
    #[error("gain not stabilizing: closed-loop moment spectral abscissa {rate} >= 0")]
    NotStabilizing { rate: f64 },
    #[error("unstable simulation: state magnitude overflow at t = {t}")]
    UnstableSimulation { t: f64 },
    #[error("second moment lost positive semidefiniteness at t = {t} (min eigenvalue {min_eig:e})")]
    MomentNotPsd { t: f64, min_eig: f64 },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("negative gap {value:e} at abscissa {abscissa}: violates the monotone limit")]
    NegativeGap { abscissa: f64, value: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
