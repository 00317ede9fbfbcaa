//! Coupled differential and algebraic Riccati equations.
//!
//! For each regime `ι` the finite-horizon value function is
//! `½⟨P_T(t,ι)x, x⟩`, where the family `P_T(·,ι)` solves the coupled
//! differential Riccati equation (DRE) backward from `P_T(T) = 0`:
//!
//! ```text
//! Ṗ + Λ[P] + PA + AᵀP + CᵀPC + Q
//!   − (PB + CᵀPD + Sᵀ)(R + DᵀPD)⁻¹(BᵀP + DᵀPC + S) = 0 ,
//! ```
//!
//! with the optimal feedback gain
//! `Θ(ι) = −(R + DᵀPD)⁻¹(BᵀP + DᵀPC + S)`. The infinite-horizon problem is
//! governed by the stationary (algebraic) version `F(P_∞) = 0`, obtained
//! here as the long-horizon limit of the backward flow — mirroring the
//! monotone convergence `P_T(0,ι) ↗ P_∞(ι)` — with an optional Newton
//! polish for quadratic terminal convergence.
//!
//! Solutions carry the regularity margin `min λ_min(R + DᵀPD)`; the
//! backward flow keeps it at or above `λ_min(R)` because `P ⪰ 0`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{
    self, min_eigenvalue, project_near_psd, svec_family, sym_inverse, symmetrize, unsvec_family,
};
use crate::markov::lambda_apply;
use crate::model::{validate_problem, LQProblem};
use crate::ode::{self, OdeOptions};
use crate::{Error, Result};

/// Step cap whenever dense output is consumed downstream: keeps the cubic
/// Hermite interpolation error a couple of orders below the solver
/// tolerances pinned by the tests.
pub(crate) const DENSE_H_MAX: f64 = 0.01;

/// Finite-horizon solution on an output grid.
#[derive(Debug, Clone)]
pub struct DRESolution {
    /// Ascending output times in `[0, T]`.
    pub grid: Vec<f64>,
    /// `p[k][ι]` is `P_T(grid[k], ι)`.
    pub p: Vec<Vec<DMatrix<f64>>>,
    /// Gains `Θ_T(grid[k], ι)`.
    pub theta: Vec<Vec<DMatrix<f64>>>,
    /// Time derivatives `dP/dt` at the grid nodes (used for interpolation).
    dp: Vec<Vec<DMatrix<f64>>>,
    /// `min_{grid, ι} λ_min(R + DᵀPD)`.
    pub delta_margin: f64,
    pub horizon: f64,
    /// Post-hoc certificate that `P` is monotone nondecreasing as `t`
    /// decreases (up to 1e−9).
    pub monotone: bool,
    dims: (usize, usize, usize),
}

impl DRESolution {
    /// `P_T(t, ·)` by cubic Hermite interpolation between grid nodes.
    pub fn p_at(&self, t: f64) -> Result<Vec<DMatrix<f64>>> {
        let (lo, hi) = (self.grid[0], *self.grid.last().unwrap());
        if t < lo - 1e-9 || t > hi + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside the solved grid [{lo}, {hi}]"
            )));
        }
        let t = t.clamp(lo, hi);
        let k = match self.grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            Ok(k) => return Ok(self.p[k].clone()),
            Err(k) => k - 1,
        };
        let (t0, t1) = (self.grid[k], self.grid[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok((0..self.dims.2)
            .map(|i| {
                symmetrize(
                    &(&self.p[k][i] * h00
                        + &self.dp[k][i] * (h10 * h)
                        + &self.p[k + 1][i] * h01
                        + &self.dp[k + 1][i] * (h11 * h)),
                )
            })
            .collect())
    }

    /// `Θ_T(t, ·)` computed from the interpolated `P`.
    pub fn theta_at(&self, p: &LQProblem, t: f64) -> Result<Vec<DMatrix<f64>>> {
        gain_from_p(p, &self.p_at(t)?)
    }

    /// `½⟨P_T(t, ι)x, x⟩`.
    pub fn value(&self, t: f64, x: &DVector<f64>, regime: usize) -> Result<f64> {
        let fam = self.p_at(t)?;
        Ok(0.5 * (&fam[regime] * x).dot(x))
    }
}

/// Stationary solution.
#[derive(Debug, Clone)]
pub struct ARESolution {
    pub p: Vec<DMatrix<f64>>,
    pub theta: Vec<DMatrix<f64>>,
    /// `max_ι ‖F(P_∞)(ι)‖_F` at the returned root.
    pub residual_norm: f64,
    /// `min_ι λ_min(R + DᵀP_∞D)`.
    pub delta_margin: f64,
    /// Spectral abscissa of the closed-loop second-moment operator;
    /// negative iff `Θ_∞` is a mean-square stabilizer.
    pub closed_loop_rate: f64,
    /// Residuals recorded across Newton refinement iterations (empty when
    /// the backward flow alone reached the tolerance).
    pub residual_history: Vec<f64>,
}

fn regularized_inner(p: &LQProblem, pmat: &DMatrix<f64>, regime: usize) -> Result<(DMatrix<f64>, f64)> {
    let d = &p.coeffs.d[regime];
    let inner = &p.cost.r[regime] + d.transpose() * pmat * d;
    sym_inverse(&inner, 1e-12).ok_or_else(|| Error::Singular {
        context: "R + DᵀPD".into(),
        regime: regime + 1,
        min_eig: min_eigenvalue(&inner),
    })
}

/// The Riccati bracket `F(P)`: left-hand side of the stationary equation,
/// equal to `−Ṗ` along the backward flow.
fn riccati_bracket(p: &LQProblem, fam: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    let m0 = p.dims.m0;
    let coupling = lambda_apply(&p.generator, fam);
    let mut out = Vec::with_capacity(m0);
    for i in 0..m0 {
        let (a, b, c, d) = (&p.coeffs.a[i], &p.coeffs.b[i], &p.coeffs.c[i], &p.coeffs.d[i]);
        let pm = &fam[i];
        let (inner_inv, _) = regularized_inner(p, pm, i)?;
        let g = b.transpose() * pm + d.transpose() * pm * c + &p.cost.s[i];
        let bracket = &coupling[i]
            + pm * a
            + a.transpose() * pm
            + c.transpose() * pm * c
            + &p.cost.q[i]
            - g.transpose() * inner_inv * &g;
        out.push(symmetrize(&bracket));
    }
    Ok(out)
}

/// Time derivative `Ṗ(ι)` for backward integration: `−F(P)(ι)`.
pub fn dre_rhs(p: &LQProblem, fam: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    Ok(riccati_bracket(p, fam)?.into_iter().map(|m| -m).collect())
}

/// Per-regime stationary residual `F(P)(ι)`; zero at a solution.
pub fn are_residual(p: &LQProblem, fam: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    riccati_bracket(p, fam)
}

/// Feedback gain `Θ(ι) = −(R + DᵀPD)⁻¹(BᵀP + DᵀPC + S)`.
pub fn gain_from_p(p: &LQProblem, fam: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(p.dims.m0);
    for i in 0..p.dims.m0 {
        let (b, c, d) = (&p.coeffs.b[i], &p.coeffs.c[i], &p.coeffs.d[i]);
        let (inner_inv, _) = regularized_inner(p, &fam[i], i)?;
        let g = b.transpose() * &fam[i] + d.transpose() * &fam[i] * c + &p.cost.s[i];
        out.push(-(inner_inv * g));
    }
    Ok(out)
}

/// `½⟨P(ι)x, x⟩`.
pub fn value_function(fam: &[DMatrix<f64>], x: &DVector<f64>, regime: usize) -> f64 {
    0.5 * (&fam[regime] * x).dot(x)
}

fn delta_margin(p: &LQProblem, fam: &[DMatrix<f64>]) -> f64 {
    (0..p.dims.m0)
        .map(|i| {
            let d = &p.coeffs.d[i];
            min_eigenvalue(&(&p.cost.r[i] + d.transpose() * &fam[i] * d))
        })
        .fold(f64::INFINITY, f64::min)
}

fn require_valid(p: &LQProblem) -> Result<()> {
    let report = validate_problem(p);
    if !report.ok {
        return Err(Error::InvalidProblem(report.messages.join("; ")));
    }
    Ok(())
}

/// Solve the DRE backward from `P(T) = 0`, recording `P` and `Θ` on
/// `out_grid` (ascending times in `[0, T]`) through dense output.
///
/// Symmetry is enforced structurally (the state lives in the symmetric
/// vectorization) and eigenvalues within roundoff of zero are projected
/// back to the PSD cone after every accepted step. Fails if the regularity
/// margin `λ_min(R + DᵀPD)` ever drops below zero, which cannot happen for
/// a validated instance.
pub fn solve_dre(p: &LQProblem, horizon: f64, out_grid: &[f64], tol: f64) -> Result<DRESolution> {
    require_valid(p)?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    if out_grid.is_empty() {
        return Err(Error::InvalidArgument("output grid is empty".into()));
    }
    if out_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("output grid must be strictly increasing".into()));
    }
    if out_grid[0] < 0.0 || *out_grid.last().unwrap() > horizon + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "output grid must lie in [0, {horizon}]"
        )));
    }
    let (n, m0) = (p.dims.n, p.dims.m0);

    // Backward time: τ = T − t, dP/dτ = F(P), P(τ=0) = 0.
    let tau_grid: Vec<f64> = out_grid.iter().rev().map(|&t| horizon - t).collect();
    let y0 = DVector::zeros(m0 * linalg::sym_dim(n));
    let opts = OdeOptions::with_tol(tol).h_max(DENSE_H_MAX);

    let rhs = |_tau: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let fam = unsvec_family(y, n, m0);
        Ok(svec_family(&riccati_bracket(p, &fam)?))
    };
    let post = |tau: f64, y: &mut DVector<f64>| -> Result<()> {
        let fam = unsvec_family(y, n, m0);
        let projected: Vec<DMatrix<f64>> = fam.iter().map(|m| project_near_psd(m, 1e-12)).collect();
        let margin = delta_margin(p, &projected);
        if margin < 0.0 {
            return Err(Error::RegularityLost { t: horizon - tau, margin });
        }
        *y = svec_family(&projected);
        Ok(())
    };

    let run = ode::integrate(rhs, (0.0, horizon), y0, &tau_grid, &opts, post)?;

    // Reverse back to ascending t.
    let mut pts: Vec<Vec<DMatrix<f64>>> = run
        .at_grid
        .into_iter()
        .map(|y| unsvec_family(&y, n, m0))
        .collect();
    pts.reverse();
    // Exact terminal condition when the grid contains T.
    if (*out_grid.last().unwrap() - horizon).abs() < 1e-12 {
        let last = pts.last_mut().unwrap();
        for m in last.iter_mut() {
            m.fill(0.0);
        }
    }

    let mut theta = Vec::with_capacity(pts.len());
    let mut dp = Vec::with_capacity(pts.len());
    let mut margin = f64::INFINITY;
    for fam in &pts {
        theta.push(gain_from_p(p, fam)?);
        dp.push(dre_rhs(p, fam)?);
        margin = margin.min(delta_margin(p, fam));
    }

    let monotone = pts.windows(2).all(|w| {
        (0..m0).all(|i| min_eigenvalue(&(&w[0][i] - &w[1][i])) >= -1e-9)
    });

    Ok(DRESolution {
        grid: out_grid.to_vec(),
        p: pts,
        theta,
        dp,
        delta_margin: margin,
        horizon,
        monotone,
        dims: (n, p.dims.m, m0),
    })
}

/// Matrix of the Newton linearization `H ↦ Λ[H] + HA^Θ + (A^Θ)ᵀH + (C^Θ)ᵀHC^Θ`
/// on the vectorized symmetric family space.
fn newton_operator(p: &LQProblem, theta: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let (a_cl, c_cl) = p.shifted_coefficients(theta)?;
    let (n, m0) = (p.dims.n, p.dims.m0);
    Ok(linalg::family_operator_matrix(n, m0, |fam| {
        let coupling = lambda_apply(&p.generator, fam);
        (0..m0)
            .map(|i| {
                symmetrize(
                    &(&coupling[i]
                        + &fam[i] * &a_cl[i]
                        + a_cl[i].transpose() * &fam[i]
                        + c_cl[i].transpose() * &fam[i] * &c_cl[i]),
                )
            })
            .collect()
    }))
}

fn max_frob(fams: &[DMatrix<f64>]) -> f64 {
    fams.iter().map(|m| m.norm()).fold(0.0, f64::max)
}

/// Solve the stationary equation as the long-horizon limit of the backward
/// flow, with Newton refinement once the residual is small.
///
/// `t_max` caps the backward horizon; when `None` it is inferred from the
/// first decade of residual decay (`50/ρ̂`, capped at 1e4 time units).
/// Stops when both the residual Frobenius norm and the step-to-step change
/// drop below `tol`. The returned gain is certified: its closed-loop moment
/// operator must have negative spectral abscissa.
pub fn solve_are(p: &LQProblem, tol: f64, t_max: Option<f64>) -> Result<ARESolution> {
    require_valid(p)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let (n, m0) = (p.dims.n, p.dims.m0);
    let ode_tol = (tol * 100.0).clamp(1e-12, 1e-8);
    let opts = OdeOptions::with_tol(ode_tol).h_max(0.25);

    let mut fam: Vec<DMatrix<f64>> = (0..m0).map(|_| DMatrix::zeros(n, n)).collect();
    let res0 = max_frob(&riccati_bracket(p, &fam)?);
    let mut residual = res0;
    let mut tau = 0.0;
    let mut decade_time: Option<f64> = None;
    let mut residual_history = Vec::new();
    let newton_threshold = 1e-5_f64.max(tol);
    let chunk = 1.0;

    let cap = |decade: Option<f64>| -> f64 {
        match t_max {
            Some(t) => t,
            None => decade.map(|t1| (50.0 * t1 / std::f64::consts::LN_10).min(1e4)).unwrap_or(1e4),
        }
    };

    loop {
        // Try Newton refinement once the flow is near the root.
        if residual <= newton_threshold {
            let mut cur = fam.clone();
            let mut cur_res = residual;
            let mut history = vec![cur_res];
            let mut converged = false;
            for _ in 0..40 {
                let theta = gain_from_p(p, &cur)?;
                let op = newton_operator(p, &theta)?;
                let rhs = -svec_family(&riccati_bracket(p, &cur)?);
                let Some(h) = op.lu().solve(&rhs) else { break };
                let hf = unsvec_family(&h, n, m0);
                let next: Vec<DMatrix<f64>> =
                    (0..m0).map(|i| symmetrize(&(&cur[i] + &hf[i]))).collect();
                let next_res = max_frob(&riccati_bracket(p, &next)?);
                if !next_res.is_finite() || next_res >= cur_res {
                    break;
                }
                cur = next;
                cur_res = next_res;
                history.push(cur_res);
                if cur_res <= tol && max_frob(&hf) <= tol {
                    converged = true;
                    break;
                }
            }
            if converged {
                fam = cur;
                residual = cur_res;
                residual_history = history;
                break;
            }
        }

        // Advance the backward flow by one chunk.
        let y0 = svec_family(&fam);
        let run = ode::integrate(
            |_t, y| {
                let f = unsvec_family(y, n, m0);
                Ok(svec_family(&riccati_bracket(p, &f)?))
            },
            (tau, tau + chunk),
            y0,
            &[],
            &opts,
            |_, y| {
                let f = unsvec_family(y, n, m0);
                let proj: Vec<DMatrix<f64>> = f.iter().map(|m| project_near_psd(m, 1e-12)).collect();
                *y = svec_family(&proj);
                Ok(())
            },
        )?;
        tau += chunk;
        let next = unsvec_family(&run.y_end, n, m0);
        let change = (0..m0).map(|i| (&next[i] - &fam[i]).norm()).fold(0.0, f64::max);
        fam = next;
        residual = max_frob(&riccati_bracket(p, &fam)?);

        if !residual.is_finite() || residual > 1e10 * (res0 + 1.0) {
            return Err(Error::HorizonCap { t_max: tau, residual });
        }
        if decade_time.is_none() && residual <= res0 / 10.0 {
            decade_time = Some(tau);
        }
        if residual <= tol && change <= tol {
            break;
        }
        if tau >= cap(decade_time) {
            return Err(Error::HorizonCap { t_max: tau, residual });
        }
    }

    let theta = gain_from_p(p, &fam)?;
    let margin = delta_margin(p, &fam);
    if margin <= 0.0 {
        return Err(Error::RegularityLost { t: 0.0, margin });
    }
    let rate = crate::stability::moment_spectral_abscissa(p, &theta)?;
    if rate >= 0.0 {
        return Err(Error::NotStabilizing { rate });
    }
    Ok(ARESolution {
        p: fam,
        theta,
        residual_norm: residual,
        delta_margin: margin,
        closed_loop_rate: rate,
        residual_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::apply_feedback_shift;
    use crate::presets;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    const GOLDEN: f64 = 1.618033988749895; // (1 + sqrt 5)/2

    fn scalar_family(v: f64) -> Vec<DMatrix<f64>> {
        vec![DMatrix::from_element(1, 1, v)]
    }

    fn uniform_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn rhs_scalar_values() {
        let p = presets::scalar_no_noise();
        assert_relative_eq!(dre_rhs(&p, &scalar_family(0.0)).unwrap()[0][(0, 0)], -1.0, epsilon = 1e-14);
        assert_relative_eq!(dre_rhs(&p, &scalar_family(1.0)).unwrap()[0][(0, 0)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gain_scalar_values() {
        let p = presets::scalar_no_noise();
        assert_relative_eq!(gain_from_p(&p, &scalar_family(1.0)).unwrap()[0][(0, 0)], -1.0, epsilon = 1e-14);
        assert_relative_eq!(gain_from_p(&p, &scalar_family(0.0)).unwrap()[0][(0, 0)], 0.0, epsilon = 1e-14);

        let p2 = presets::scalar_control_noise();
        let th = gain_from_p(&p2, &scalar_family(GOLDEN)).unwrap()[0][(0, 0)];
        assert_relative_eq!(th, -(GOLDEN - 1.0), epsilon = 1e-12); // −(√5−1)/2
    }

    #[test]
    fn residual_values() {
        let p = presets::scalar_no_noise();
        assert_relative_eq!(are_residual(&p, &scalar_family(1.0)).unwrap()[0][(0, 0)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(are_residual(&p, &scalar_family(0.0)).unwrap()[0][(0, 0)], 1.0, epsilon = 1e-14);

        let p2 = presets::scalar_control_noise();
        assert!(are_residual(&p2, &scalar_family(GOLDEN)).unwrap()[0].amax() <= 1e-12);
    }

    #[test]
    fn singular_inner_matrix_is_reported() {
        // R + DᵀPD = 1 + (−1) = 0 at P = −1 with D = 1
        let p = presets::scalar_control_noise();
        match dre_rhs(&p, &scalar_family(-1.0)) {
            Err(Error::Singular { regime, .. }) => assert_eq!(regime, 1),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn dre_matches_tanh() {
        let p = presets::scalar_no_noise();
        let grid = uniform_grid(0.0, 5.0, 101);
        let sol = solve_dre(&p, 5.0, &grid, 1e-10).unwrap();
        let mut max_err: f64 = 0.0;
        for (k, &t) in grid.iter().enumerate() {
            max_err = max_err.max((sol.p[k][0][(0, 0)] - (5.0 - t).tanh()).abs());
        }
        assert!(max_err <= 1e-8, "max error {max_err}");
        // terminal condition is exact
        assert_eq!(sol.p.last().unwrap()[0][(0, 0)], 0.0);
        assert!(sol.monotone);
        // value identity at t = 0, x = 2
        let x = nalgebra::DVector::from_element(1, 2.0);
        assert_relative_eq!(sol.value(0.0, &x, 0).unwrap(), 2.0 * 5.0f64.tanh(), epsilon = 1e-8);
    }

    #[test]
    fn dre_interpolation_is_consistent() {
        // interpolation error between output nodes scales with the node
        // spacing to the fourth power, so a 501-node grid keeps it ~1e-11
        let p = presets::scalar_no_noise();
        let grid = uniform_grid(0.0, 5.0, 501);
        let sol = solve_dre(&p, 5.0, &grid, 1e-10).unwrap();
        // off-grid queries agree with the analytic solution
        for &t in &[0.033, 1.27, 2.71, 4.995] {
            let v = sol.p_at(t).unwrap()[0][(0, 0)];
            assert!((v - (5.0 - t).tanh()).abs() < 1e-8, "at {t}");
            let th = sol.theta_at(&p, t).unwrap()[0][(0, 0)];
            assert!((th + (5.0 - t).tanh()).abs() < 1e-8, "gain at {t}");
        }
        // node queries return the stored values
        assert_eq!(sol.p_at(grid[10]).unwrap()[0], sol.p[10][0]);
    }

    #[test]
    fn dre_margin_never_below_control_weight() {
        for (_, p) in presets::corpus() {
            let grid = uniform_grid(0.0, 4.0, 81);
            let sol = solve_dre(&p, 4.0, &grid, 1e-10).unwrap();
            let r_min = p.cost.r.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
            assert!(sol.delta_margin >= r_min - 1e-10);
        }
    }

    #[test]
    fn are_scalar_no_noise() {
        let p = presets::scalar_no_noise();
        let sol = solve_are(&p, 1e-10, None).unwrap();
        assert_relative_eq!(sol.p[0][(0, 0)], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.theta[0][(0, 0)], -1.0, epsilon = 1e-10);
        assert!(sol.residual_norm <= 1e-10);
        assert_relative_eq!(sol.closed_loop_rate, -2.0, epsilon = 1e-8);
    }

    #[test]
    fn are_scalar_control_noise() {
        let p = presets::scalar_control_noise();
        let sol = solve_are(&p, 1e-10, None).unwrap();
        assert_relative_eq!(sol.p[0][(0, 0)], GOLDEN, epsilon = 1e-10);
        assert_relative_eq!(sol.theta[0][(0, 0)], -(GOLDEN - 1.0), epsilon = 1e-10);
        // scalar moment rate 2(A+BΘ) + (C+DΘ)²
        let th = sol.theta[0][(0, 0)];
        assert_relative_eq!(sol.closed_loop_rate, 2.0 * th + th * th, epsilon = 1e-8);
    }

    #[test]
    fn are_two_regime_matches_bisection_oracle() {
        // Independent oracle: eliminate P2 via the first equation and bisect
        // the remaining scalar equation. The frozen values below were
        // produced by this same routine.
        let f = |p1: f64| {
            let p2 = p1 * p1 + p1 - 1.0;
            p1 - 3.0 * p2 + 1.0 - p2 * p2
        };
        let (mut lo, mut hi) = (0.5, 1.5);
        assert!(f(lo) > 0.0 && f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p1 = 0.5 * (lo + hi);
        let p2 = p1 * p1 + p1 - 1.0;
        assert_relative_eq!(p1, 0.8304148510933997, epsilon = 1e-12);
        assert_relative_eq!(p2, 0.520003676009873, epsilon = 1e-12);

        let p = presets::two_regime_scalar();
        let sol = solve_are(&p, 1e-10, None).unwrap();
        assert_relative_eq!(sol.p[0][(0, 0)], p1, epsilon = 1e-9);
        assert_relative_eq!(sol.p[1][(0, 0)], p2, epsilon = 1e-9);
        assert!(sol.closed_loop_rate < 0.0);
        assert_relative_eq!(sol.closed_loop_rate, -2.1357034381010482, epsilon = 1e-7);
    }

    #[test]
    fn are_rhs_vanishes_at_root() {
        for (_, p) in presets::corpus() {
            let sol = solve_are(&p, 1e-10, None).unwrap();
            assert!(max_frob(&dre_rhs(&p, &sol.p).unwrap()) <= 1e-9);
        }
    }

    #[test]
    fn newton_reduces_residual_monotonically() {
        let p = presets::two_regime_scalar();
        let sol = solve_are(&p, 1e-12, None).unwrap();
        assert!(sol.residual_history.len() >= 2, "Newton polish should have run");
        assert!(sol.residual_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn non_stabilizable_instance_hits_horizon_cap() {
        // unstable drift with no control authority: the flow diverges
        let p = presets::scalar_single_regime(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0);
        match solve_are(&p, 1e-10, Some(5.0)) {
            Err(Error::HorizonCap { residual, .. }) => assert!(residual > 1.0),
            other => panic!("expected horizon cap, got {other:?}"),
        }
    }

    #[test]
    fn invalid_problem_is_rejected() {
        let p = presets::indefinite_control_weight();
        assert!(matches!(solve_are(&p, 1e-10, None), Err(Error::InvalidProblem(_))));
        assert!(matches!(solve_dre(&p, 1.0, &[0.0, 1.0], 1e-10), Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn value_function_values() {
        let fam = scalar_family(1.0);
        let x = nalgebra::DVector::from_element(1, 3.0);
        assert_relative_eq!(value_function(&fam, &x, 0), 4.5, epsilon = 1e-14);
        assert_eq!(value_function(&fam, &nalgebra::DVector::zeros(1), 0), 0.0);
    }

    // The closed-loop (gain-shifted) form of the equation is algebraically
    // identical to the plain form when evaluated at Θ = gain(P).
    #[test]
    fn shifted_form_equivalence() {
        let p = presets::two_regime_scalar();
        for seed in 0..20 {
            let v1 = 0.1 + 0.37 * seed as f64;
            let v2 = 0.05 + 0.23 * seed as f64;
            let fam = vec![DMatrix::from_element(1, 1, v1), DMatrix::from_element(1, 1, v2)];
            let theta = gain_from_p(&p, &fam).unwrap();
            let plain = riccati_bracket(&p, &fam).unwrap();

            let shifted_problem = apply_feedback_shift(&p, &theta).unwrap();
            let coupling = lambda_apply(&p.generator, &fam);
            for i in 0..p.dims.m0 {
                let (a_cl, c_cl) = (&shifted_problem.coeffs.a[i], &shifted_problem.coeffs.c[i]);
                let (q_cl, s_cl) = (&shifted_problem.cost.q[i], &shifted_problem.cost.s[i]);
                let (b, d) = (&p.coeffs.b[i], &p.coeffs.d[i]);
                let (inner_inv, _) = regularized_inner(&p, &fam[i], i).unwrap();
                let left = &fam[i] * b + c_cl.transpose() * &fam[i] * d + s_cl.transpose();
                let right = b.transpose() * &fam[i] + d.transpose() * &fam[i] * c_cl + s_cl;
                let shifted = &coupling[i]
                    + &fam[i] * a_cl
                    + a_cl.transpose() * &fam[i]
                    + c_cl.transpose() * &fam[i] * c_cl
                    + q_cl
                    - left * inner_inv * right;
                assert!(
                    (&shifted - &plain[i]).amax() < 1e-10,
                    "forms disagree at seed {seed}, regime {i}"
                );
            }
        }
    }
}
