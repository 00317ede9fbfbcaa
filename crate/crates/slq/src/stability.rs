//! Mean-square stability certificates and exact second-moment dynamics.
//!
//! For the closed loop `[A^Θ, C^Θ]` two linear objects decide stability:
//!
//! * the quadratic generator acting on test families
//!   `Σ ↦ Λ[Σ] + ΣA^Θ + (A^Θ)ᵀΣ + (C^Θ)ᵀΣC^Θ`, whose quadratic form gives
//!   `d/ds E⟨Σ(α)X, X⟩`; a positive-definite family with
//!   `generator(Σ) ⪯ −δΣ` is a dissipativity certificate with rate `δ`;
//!
//! * the second-moment flow on `Y_ι(t) = E[X(t)X(t)ᵀ 1{α(t)=ι}]`,
//!
//!   ```text
//!   Ẏ_ι = A^Θ(ι) Y_ι + Y_ι A^Θ(ι)ᵀ + C^Θ(ι) Y_ι C^Θ(ι)ᵀ + Σ_ȷ λ_ȷι Y_ȷ ,
//!   ```
//!
//!   with the adjoint chain coupling `λ_ȷι` (the forward equation of the
//!   chain), so that `d/dt Σ_ι tr(Σ(ι)Y_ι) = Σ_ι tr(generator(Σ)(ι) Y_ι)`.
//!
//! The spectral abscissa of the moment flow, computed exactly on the
//! vectorized symmetric family space, is negative iff the loop is
//! mean-square stable; it doubles as the certified decay rate used by the
//! turnpike experiments. `E|X(t)|² = Σ_ι tr Y_ι(t)` throughout.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, family_operator_matrix, max_eigenvalue, min_eigenvalue, svec_family, symmetrize, unsvec_family};
use crate::markov::lambda_apply;
use crate::model::LQProblem;
use crate::ode::{self, OdeOptions};
use crate::riccati::DRESolution;
use crate::{Error, Result};

/// Candidate Lyapunov data for the dissipativity inequality.
#[derive(Debug, Clone)]
pub struct DissipativityCertificate {
    /// Positive definite family Σ(ι).
    pub sigma: Vec<DMatrix<f64>>,
    /// Claimed decay rate δ > 0.
    pub delta: f64,
}

/// Outcome of a certificate check.
#[derive(Debug, Clone)]
pub struct DissipativityVerdict {
    pub valid: bool,
    /// Per-regime smallest eigenvalue of `−[generator(Σ) + δΣ](ι)`;
    /// the certificate holds iff every slack is ≥ 0 (up to 1e−10).
    pub slack: Vec<f64>,
}

/// Feedback gains over time: either a constant family or the time-varying
/// gains of a finite-horizon Riccati solution.
pub enum GainSchedule<'a> {
    Constant(&'a [DMatrix<f64>]),
    Varying(&'a LQProblem, &'a DRESolution),
}

impl GainSchedule<'_> {
    pub fn at(&self, t: f64) -> Result<Vec<DMatrix<f64>>> {
        match self {
            GainSchedule::Constant(g) => Ok(g.to_vec()),
            GainSchedule::Varying(p, dre) => dre.theta_at(p, t),
        }
    }
}

/// `Λ[Σ] + ΣA^Θ + (A^Θ)ᵀΣ + (C^Θ)ᵀΣC^Θ` per regime.
pub fn quadratic_generator(
    p: &LQProblem,
    theta: &[DMatrix<f64>],
    sigma: &[DMatrix<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    let (a_cl, c_cl) = p.shifted_coefficients(theta)?;
    let coupling = lambda_apply(&p.generator, sigma);
    Ok((0..p.dims.m0)
        .map(|i| {
            symmetrize(
                &(&coupling[i]
                    + &sigma[i] * &a_cl[i]
                    + a_cl[i].transpose() * &sigma[i]
                    + c_cl[i].transpose() * &sigma[i] * &c_cl[i]),
            )
        })
        .collect())
}

/// Evaluate the dissipativity inequality for the loop closed by `theta`
/// (`None` means the open loop, Θ = 0).
pub fn check_dissipativity(
    p: &LQProblem,
    theta: Option<&[DMatrix<f64>]>,
    cert: &DissipativityCertificate,
) -> Result<DissipativityVerdict> {
    for (i, s) in cert.sigma.iter().enumerate() {
        let min_eig = min_eigenvalue(s);
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite { regime: i + 1, min_eig });
        }
    }
    let zero = p.zero_gains();
    let theta = theta.unwrap_or(&zero);
    let gen = quadratic_generator(p, theta, &cert.sigma)?;
    let slack: Vec<f64> = (0..p.dims.m0)
        .map(|i| min_eigenvalue(&(-(&gen[i] + &cert.sigma[i] * cert.delta))))
        .collect();
    let valid = (0..p.dims.m0)
        .all(|i| max_eigenvalue(&(&gen[i] + &cert.sigma[i] * cert.delta)) <= 1e-10);
    Ok(DissipativityVerdict { valid, slack })
}

/// Per-regime second moments at one time point.
#[derive(Debug, Clone)]
pub struct SecondMomentState {
    pub t: f64,
    /// `y[ι] = E[X(t)X(t)ᵀ 1{α(t)=ι}]`.
    pub y: Vec<DMatrix<f64>>,
}

impl SecondMomentState {
    /// Moment of a deterministic initial triple: all mass in one regime.
    pub fn from_initial(x: &DVector<f64>, regime: usize, m0: usize, t: f64) -> Self {
        let n = x.len();
        let y = (0..m0)
            .map(|i| if i == regime { x * x.transpose() } else { DMatrix::zeros(n, n) })
            .collect();
        Self { t, y }
    }

    /// `E|X(t)|² = Σ_ι tr Y_ι`.
    pub fn mean_square(&self) -> f64 {
        self.y.iter().map(|m| m.trace()).sum()
    }
}

fn moment_rhs_with(
    gen_rates: &crate::model::SwitchingGenerator,
    a_cl: &[DMatrix<f64>],
    c_cl: &[DMatrix<f64>],
    y: &[DMatrix<f64>],
) -> Vec<DMatrix<f64>> {
    let m0 = a_cl.len();
    (0..m0)
        .map(|i| {
            let mut out = &a_cl[i] * &y[i]
                + &y[i] * a_cl[i].transpose()
                + &c_cl[i] * &y[i] * c_cl[i].transpose();
            for j in 0..m0 {
                // adjoint coupling: mass flows j -> i at rate λ_ȷι
                out += &y[j] * gen_rates.rate(j, i);
            }
            symmetrize(&out)
        })
        .collect()
}

/// Right-hand side of the second-moment flow for the loop closed by `theta`.
pub fn moment_rhs(p: &LQProblem, theta: &[DMatrix<f64>], y: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    let (a_cl, c_cl) = p.shifted_coefficients(theta)?;
    Ok(moment_rhs_with(&p.generator, &a_cl, &c_cl, y))
}

/// Largest real part of the eigenvalues of the moment flow, assembled as a
/// matrix on the `m0·n(n+1)/2`-dimensional vectorized symmetric space.
/// The closed loop is mean-square stable iff the result is negative.
pub fn moment_spectral_abscissa(p: &LQProblem, theta: &[DMatrix<f64>]) -> Result<f64> {
    let (a_cl, c_cl) = p.shifted_coefficients(theta)?;
    let op = family_operator_matrix(p.dims.n, p.dims.m0, |fam| {
        moment_rhs_with(&p.generator, &a_cl, &c_cl, fam)
    });
    let rate = linalg::spectral_abscissa(&op);
    if !rate.is_finite() {
        return Err(Error::InvalidArgument("eigenvalue computation failed".into()));
    }
    Ok(rate)
}

/// Propagate a general per-regime moment family with time-dependent
/// closed-loop coefficients, recording the state at `grid` (ascending,
/// `grid[0]` is the initial time).
///
/// This is shared by the plain closed-loop propagation and the joint
/// (2n-dimensional) systems used for turnpike verification.
pub fn propagate_moment_family<FA, FC>(
    gen: &crate::model::SwitchingGenerator,
    mut a_of_t: FA,
    mut c_of_t: FC,
    y0: &[DMatrix<f64>],
    grid: &[f64],
    tol: f64,
) -> Result<Vec<SecondMomentState>>
where
    FA: FnMut(f64) -> Result<Vec<DMatrix<f64>>>,
    FC: FnMut(f64) -> Result<Vec<DMatrix<f64>>>,
{
    if grid.len() < 2 {
        return Err(Error::InvalidArgument("moment propagation needs at least two grid times".into()));
    }
    let n = y0[0].nrows();
    let m0 = y0.len();
    let opts = OdeOptions::with_tol(tol).h_max(crate::riccati::DENSE_H_MAX);
    let run = ode::integrate(
        |t, y: &DVector<f64>| {
            let fam = unsvec_family(y, n, m0);
            let a = a_of_t(t)?;
            let c = c_of_t(t)?;
            Ok(svec_family(&moment_rhs_with(gen, &a, &c, &fam)))
        },
        (grid[0], *grid.last().unwrap()),
        svec_family(y0),
        grid,
        &opts,
        |t, y| {
            let fam = unsvec_family(y, n, m0);
            let mut proj = Vec::with_capacity(m0);
            for m in &fam {
                let min_eig = min_eigenvalue(m);
                if min_eig < -1e-9 * (1.0 + m.amax()) {
                    return Err(Error::MomentNotPsd { t, min_eig });
                }
                proj.push(crate::linalg::project_near_psd(m, 1e-12));
            }
            *y = svec_family(&proj);
            Ok(())
        },
    )?;
    Ok(grid
        .iter()
        .zip(run.at_grid)
        .map(|(&t, y)| SecondMomentState { t, y: unsvec_family(&y, n, m0) })
        .collect())
}

/// Exact mean-square trajectory of the loop closed by `gains`, starting
/// from `y0` at `grid[0]`.
pub fn propagate_second_moment(
    p: &LQProblem,
    gains: &GainSchedule<'_>,
    y0: &SecondMomentState,
    grid: &[f64],
    tol: f64,
) -> Result<Vec<SecondMomentState>> {
    match gains {
        GainSchedule::Constant(theta) => {
            let (a_cl, c_cl) = p.shifted_coefficients(theta)?;
            propagate_moment_family(
                &p.generator,
                |_| Ok(a_cl.clone()),
                |_| Ok(c_cl.clone()),
                &y0.y,
                grid,
                tol,
            )
        }
        GainSchedule::Varying(pp, dre) => propagate_moment_family(
            &p.generator,
            |t| {
                let th = dre.theta_at(pp, t)?;
                Ok(p.shifted_coefficients(&th)?.0)
            },
            |t| {
                let th = dre.theta_at(pp, t)?;
                Ok(p.shifted_coefficients(&th)?.1)
            },
            &y0.y,
            grid,
            tol,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostWeights, Dimensions, LQProblem, RegimeCoefficients, SwitchingGenerator};
    use crate::presets;
    use crate::riccati::solve_are;
    use approx::assert_relative_eq;

    fn e(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn dissipativity_scalar_slack() {
        // stable scalar drift A = −1: 2AΣ = −2Σ, so δ = 2 is tight
        let p = presets::scalar_single_regime(-1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0);
        let cert = DissipativityCertificate { sigma: vec![e(1.0)], delta: 2.0 };
        let v = check_dissipativity(&p, None, &cert).unwrap();
        assert!(v.valid);
        assert_relative_eq!(v.slack[0], 0.0, epsilon = 1e-12);

        let cert = DissipativityCertificate { sigma: vec![e(1.0)], delta: 3.0 };
        let v = check_dissipativity(&p, None, &cert).unwrap();
        assert!(!v.valid);
        assert_relative_eq!(v.slack[0], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn dissipativity_rejects_indefinite_sigma() {
        let p = presets::scalar_no_noise();
        let cert = DissipativityCertificate { sigma: vec![e(-1.0)], delta: 1.0 };
        assert!(matches!(
            check_dissipativity(&p, None, &cert),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn constant_sigma_reduces_to_per_regime_lyapunov() {
        // with a constant family the coupling term vanishes
        let p = presets::two_regime_scalar();
        let sigma = vec![e(1.0), e(1.0)];
        let gen = quadratic_generator(&p, &p.zero_gains(), &sigma).unwrap();
        // regime 1: 2·A(1)·Σ = 0; regime 2: 2·A(2)·Σ = −2
        assert_relative_eq!(gen[0][(0, 0)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(gen[1][(0, 0)], -2.0, epsilon = 1e-14);
    }

    #[test]
    fn quadratic_generator_scalar_values() {
        let p = presets::scalar_no_noise();
        let theta = vec![e(-1.0)];
        let out = quadratic_generator(&p, &theta, &[e(1.0)]).unwrap();
        assert_relative_eq!(out[0][(0, 0)], -2.0, epsilon = 1e-14);

        let p2 = presets::scalar_control_noise();
        let th = -((5.0f64.sqrt() - 1.0) / 2.0);
        let out = quadratic_generator(&p2, &[e(th)], &[e(1.0)]).unwrap();
        assert_relative_eq!(out[0][(0, 0)], 2.0 * th + th * th, epsilon = 1e-12);
    }

    #[test]
    fn moment_rhs_values_and_adjoint_coupling() {
        let p = presets::scalar_no_noise();
        let theta = vec![e(-1.0)];
        assert_eq!(moment_rhs(&p, &theta, &[e(0.0)]).unwrap()[0][(0, 0)], 0.0);
        assert_relative_eq!(moment_rhs(&p, &theta, &[e(1.0)]).unwrap()[0][(0, 0)], -2.0, epsilon = 1e-14);

        // mass leaves regime 1 into regime 2 through the adjoint index
        let p2 = presets::two_regime_scalar();
        let rhs = moment_rhs(&p2, &p2.zero_gains(), &[e(1.0), e(0.0)]).unwrap();
        // regime 2 equation: 2·A(2)·0 + λ_12·Y1 = 1
        assert_relative_eq!(rhs[1][(0, 0)], 1.0, epsilon = 1e-14);
        // regime 1 equation: 2·A(1)·1 + λ_11·Y1 = −1
        assert_relative_eq!(rhs[0][(0, 0)], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn abscissa_scalar_cases() {
        let p = presets::scalar_no_noise();
        assert_relative_eq!(moment_spectral_abscissa(&p, &[e(-1.0)]).unwrap(), -2.0, epsilon = 1e-12);
        // open loop with A = 0 is marginally unstable
        assert_relative_eq!(moment_spectral_abscissa(&p, &p.zero_gains()).unwrap(), 0.0, epsilon = 1e-12);

        let p2 = presets::scalar_control_noise();
        let th = -((5.0f64.sqrt() - 1.0) / 2.0);
        assert_relative_eq!(
            moment_spectral_abscissa(&p2, &[e(th)]).unwrap(),
            2.0 * th + th * th,
            epsilon = 1e-12
        );
    }

    #[test]
    fn are_gain_is_certified_stabilizer_on_corpus() {
        for (name, p) in presets::corpus() {
            let sol = solve_are(&p, 1e-10, None).unwrap();
            let rate = moment_spectral_abscissa(&p, &sol.theta).unwrap();
            assert!(rate < 0.0, "{name}: rate {rate}");
        }
    }

    #[test]
    fn propagation_matches_scalar_exponential() {
        let p = presets::scalar_no_noise();
        let theta = vec![e(-1.0)];
        let y0 = SecondMomentState::from_initial(&DVector::from_element(1, 1.0), 0, 1, 0.0);
        let g = grid(0.0, 3.0, 31);
        let traj = propagate_second_moment(&p, &GainSchedule::Constant(&theta), &y0, &g, 1e-10).unwrap();
        for st in &traj {
            assert_relative_eq!(st.mean_square(), (-2.0 * st.t).exp(), epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_moment_stays_zero() {
        let p = presets::two_regime_scalar();
        let y0 = SecondMomentState { t: 0.0, y: vec![e(0.0), e(0.0)] };
        let g = grid(0.0, 2.0, 21);
        let traj =
            propagate_second_moment(&p, &GainSchedule::Constant(&p.zero_gains()), &y0, &g, 1e-10).unwrap();
        assert!(traj.iter().all(|s| s.mean_square() == 0.0));
    }

    #[test]
    fn driftless_noiseless_chain_conserves_mass() {
        // A = C = 0 in all three regimes: the coupling only moves mass around
        let e3 = |v: f64| DMatrix::from_element(1, 1, v);
        let gen = SwitchingGenerator::new(DMatrix::from_row_slice(
            3,
            3,
            &[-3.0, 1.0, 2.0, 0.5, -1.5, 1.0, 1.0, 2.0, -3.0],
        ))
        .unwrap();
        let p = LQProblem::new(
            Dimensions::new(1, 1, 3).unwrap(),
            RegimeCoefficients {
                a: vec![e3(0.0), e3(0.0), e3(0.0)],
                b: vec![e3(0.0), e3(0.0), e3(0.0)],
                c: vec![e3(0.0), e3(0.0), e3(0.0)],
                d: vec![e3(0.0), e3(0.0), e3(0.0)],
            },
            CostWeights {
                q: vec![e3(1.0), e3(1.0), e3(1.0)],
                s: vec![e3(0.0), e3(0.0), e3(0.0)],
                r: vec![e3(1.0), e3(1.0), e3(1.0)],
            },
            gen,
        )
        .unwrap();
        let y0 = SecondMomentState::from_initial(&DVector::from_element(1, 2.0), 1, 3, 0.0);
        let g = grid(0.0, 5.0, 26);
        let traj =
            propagate_second_moment(&p, &GainSchedule::Constant(&p.zero_gains()), &y0, &g, 1e-11).unwrap();
        for st in &traj {
            assert_relative_eq!(st.mean_square(), 4.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn duality_of_generator_and_moment_flow() {
        // d/dt Σ tr(Σ(ι)Y_ι) must equal Σ tr(generator(Σ)(ι) Y_ι)
        let p = presets::two_regime_scalar();
        let sol = solve_are(&p, 1e-10, None).unwrap();
        let sigma = vec![e(2.0), e(1.0)];
        let y0 = SecondMomentState::from_initial(&DVector::from_element(1, 1.0), 0, 2, 0.0);
        let h = 1e-3;
        let g: Vec<f64> = (0..=2000).map(|i| i as f64 * h).collect();
        let traj =
            propagate_second_moment(&p, &GainSchedule::Constant(&sol.theta), &y0, &g, 1e-11).unwrap();
        let gen_sigma = quadratic_generator(&p, &sol.theta, &sigma).unwrap();
        let pair = |st: &SecondMomentState| -> f64 {
            (0..2).map(|i| (&sigma[i] * &st.y[i]).trace()).sum()
        };
        for k in (100..2000).step_by(100) {
            let fd = (pair(&traj[k + 1]) - pair(&traj[k - 1])) / (2.0 * h);
            let exact: f64 = (0..2).map(|i| (&gen_sigma[i] * &traj[k].y[i]).trace()).sum();
            assert!(
                (fd - exact).abs() <= 1e-5 * (1.0 + exact.abs()),
                "at t={}: fd {fd} vs exact {exact}",
                traj[k].t
            );
        }
    }

    #[test]
    fn certificate_rate_bounds_observed_decay() {
        // valid certificate (Σ = 1, δ = 2) for the drift-free loop: the
        // weighted moment must decay at least as fast as e^{−2t}
        let p = presets::scalar_no_noise();
        let theta = vec![e(-1.0)];
        let cert = DissipativityCertificate { sigma: vec![e(1.0)], delta: 2.0 };
        assert!(check_dissipativity(&p, Some(&theta), &cert).unwrap().valid);
        let y0 = SecondMomentState::from_initial(&DVector::from_element(1, 1.0), 0, 1, 0.0);
        let g = grid(0.0, 4.0, 41);
        let traj = propagate_second_moment(&p, &GainSchedule::Constant(&theta), &y0, &g, 1e-10).unwrap();
        let v0 = traj[0].mean_square();
        for st in &traj {
            assert!(st.mean_square() <= v0 * (-2.0 * st.t).exp() + 1e-9);
        }
    }
}
