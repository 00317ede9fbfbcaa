//! Small reference instances with known closed-form or oracle solutions.
//!
//! These are used throughout the tests and make handy starting points for
//! experiments. All of them are scalar (n = m = 1) so every Riccati object
//! has an explicit companion: the drift-free instance has
//! `P_T(t) = tanh(T − t)` and `P_∞ = 1`; the control-noise instance has
//! `P_∞ = (1 + √5)/2`; the two-regime instance solves a coupled pair of
//! scalar quadratics.

use nalgebra::DMatrix;

use crate::model::{CostWeights, Dimensions, LQProblem, RegimeCoefficients, SwitchingGenerator};

/// A single-regime scalar problem with the given coefficients.
pub fn scalar_single_regime(a: f64, b: f64, c: f64, d: f64, q: f64, s: f64, r: f64) -> LQProblem {
    let e = |v: f64| DMatrix::from_element(1, 1, v);
    LQProblem::new(
        Dimensions::new(1, 1, 1).unwrap(),
        RegimeCoefficients {
            a: vec![e(a)],
            b: vec![e(b)],
            c: vec![e(c)],
            d: vec![e(d)],
        },
        CostWeights {
            q: vec![e(q)],
            s: vec![e(s)],
            r: vec![e(r)],
        },
        SwitchingGenerator::new(DMatrix::zeros(1, 1)).unwrap(),
    )
    .unwrap()
}

/// Scalar drift-free instance: `A=0, B=1, C=0, D=0, Q=1, S=0, R=1`.
///
/// The Riccati equation is `Ṗ = P² − 1` backward from 0, so
/// `P_T(t) = tanh(T − t)`, `P_∞ = 1`, `Θ_∞ = −1`, and the closed-loop
/// mean-square decay rate is 2.
pub fn scalar_no_noise() -> LQProblem {
    scalar_single_regime(0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0)
}

/// Scalar instance with control-dependent noise: `D = 1`, otherwise as
/// [`scalar_no_noise`]. The stationary Riccati root solves
/// `1 − P²/(1 + P) = 0`, i.e. `P_∞ = (1 + √5)/2`.
pub fn scalar_control_noise() -> LQProblem {
    scalar_single_regime(0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0)
}

/// Two-regime scalar instance with generator `[[−1, 1], [1, −1]]` and
/// drifts `A(1) = 0`, `A(2) = −1` (`B = 1`, `C = D = 0`, `Q = R = 1`,
/// `S = 0` in both regimes).
///
/// The stationary pair solves the coupled system
/// `{P₂ − P₁ + 1 − P₁² = 0, P₁ − 3P₂ + 1 − P₂² = 0}`.
pub fn two_regime_scalar() -> LQProblem {
    let e = |v: f64| DMatrix::from_element(1, 1, v);
    LQProblem::new(
        Dimensions::new(1, 1, 2).unwrap(),
        RegimeCoefficients {
            a: vec![e(0.0), e(-1.0)],
            b: vec![e(1.0), e(1.0)],
            c: vec![e(0.0), e(0.0)],
            d: vec![e(0.0), e(0.0)],
        },
        CostWeights {
            q: vec![e(1.0), e(1.0)],
            s: vec![e(0.0), e(0.0)],
            r: vec![e(1.0), e(1.0)],
        },
        SwitchingGenerator::new(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])).unwrap(),
    )
    .unwrap()
}

/// Sign-indefinite single-regime instance (`dX = u dW`, cost `|X|² − |u|²`):
/// the infimum of the cost is −∞ and validation must reject it.
pub fn indefinite_control_weight() -> LQProblem {
    scalar_single_regime(0.0, 0.0, 0.0, 1.0, 1.0, 0.0, -1.0)
}

/// The full corpus of valid reference instances.
pub fn corpus() -> Vec<(&'static str, LQProblem)> {
    vec![
        ("scalar-no-noise", scalar_no_noise()),
        ("scalar-control-noise", scalar_control_noise()),
        ("two-regime-scalar", two_regime_scalar()),
    ]
}
