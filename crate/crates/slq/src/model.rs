//! Problem data and assumption checks.
//!
//! An [`LQProblem`] bundles the per-regime state-equation coefficients
//! `(A, B, C, D)`, the cost weights `(Q, S, R)`, and the chain generator.
//! Cost positivity is the standard definiteness assumption
//!
//! ```text
//! Q(ι) ≻ 0,   R(ι) ≻ 0,   Q(ι) − S(ι)ᵀ R(ι)⁻¹ S(ι) ≻ 0      for all ι,
//! ```
//!
//! checked through smallest eigenvalues so the margins are available to the
//! solvers. Feedback shifts replace `u` by `Θ(α)X + v` and push the gain into
//! the coefficients and weights; the Schur complement `Q − SᵀR⁻¹S` is
//! invariant under this shift, which is the basis of several tests.
//!
//! Regime indices are 1-based in configs and messages (matching the usual
//! `{1, …, m0}` convention) and 0-based in code; the config parser is the
//! only place that converts.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::linalg::{asymmetry, min_eigenvalue, sym_inverse, symmetrize};
use crate::{Error, Result};

/// Symmetry violations up to this size are silently symmetrized on
/// ingestion; anything larger is a structural error.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// State, control, and regime-count dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dimensions {
    pub n: usize,
    pub m: usize,
    pub m0: usize,
}

impl Dimensions {
    pub fn new(n: usize, m: usize, m0: usize) -> Result<Self> {
        if n == 0 || m == 0 || m0 == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be positive, got n={n}, m={m}, m0={m0}"
            )));
        }
        Ok(Self { n, m, m0 })
    }
}

/// Per-regime state-equation coefficients.
#[derive(Debug, Clone)]
pub struct RegimeCoefficients {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: Vec<DMatrix<f64>>,
    pub d: Vec<DMatrix<f64>>,
}

/// Per-regime cost weights.
#[derive(Debug, Clone)]
pub struct CostWeights {
    pub q: Vec<DMatrix<f64>>,
    pub s: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
}

/// Generator of the switching chain: off-diagonal entries are jump rates,
/// each row sums to zero.
#[derive(Debug, Clone)]
pub struct SwitchingGenerator {
    rates: DMatrix<f64>,
}

impl SwitchingGenerator {
    /// Wraps a square rate matrix. Shape and finiteness are structural
    /// (errors); the sign and row-sum properties are validation checks,
    /// reported by [`validate_problem`].
    pub fn new(rates: DMatrix<f64>) -> Result<Self> {
        if rates.nrows() != rates.ncols() {
            return Err(Error::Shape {
                context: "generator".into(),
                expected: "square matrix".into(),
                got: format!("{}x{}", rates.nrows(), rates.ncols()),
            });
        }
        ensure_finite(&rates, "generator")?;
        Ok(Self { rates })
    }

    pub fn m0(&self) -> usize {
        self.rates.nrows()
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rates[(from, to)]
    }

    /// Check \\(λ_{ιȷ} > 0\\) off the diagonal (when m0 > 1) and zero row
    /// sums. Returns human-readable findings, 1-based rows.
    pub fn check(&self) -> Vec<String> {
        let m0 = self.m0();
        let mut findings = Vec::new();
        for i in 0..m0 {
            let row_sum: f64 = (0..m0).map(|j| self.rates[(i, j)]).sum();
            if row_sum.abs() > SYMMETRY_TOL {
                findings.push(format!("generator row {} sums to {row_sum:e}, expected 0", i + 1));
            }
            for j in 0..m0 {
                if i != j && self.rates[(i, j)] <= 0.0 {
                    findings.push(format!(
                        "generator entry ({}, {}) = {} must be strictly positive",
                        i + 1,
                        j + 1,
                        self.rates[(i, j)]
                    ));
                }
            }
        }
        findings
    }
}

/// A complete problem instance.
#[derive(Debug, Clone)]
pub struct LQProblem {
    pub dims: Dimensions,
    pub coeffs: RegimeCoefficients,
    pub cost: CostWeights,
    pub generator: SwitchingGenerator,
}

/// Initial triple `(t, x, regime)`; the regime index is 0-based here.
#[derive(Debug, Clone)]
pub struct InitialTriple {
    pub t: f64,
    pub x: DVector<f64>,
    pub regime: usize,
}

impl InitialTriple {
    pub fn new(t: f64, x: DVector<f64>, regime: usize) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("initial time must be >= 0, got {t}")));
        }
        Ok(Self { t, x, regime })
    }
}

/// Outcome of [`validate_problem`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    /// Per regime: (λ_min(R), λ_min(Q − SᵀR⁻¹S)). The Schur margin is NaN
    /// when R is numerically singular.
    pub a3_margins: Vec<(f64, f64)>,
    pub generator_ok: bool,
    pub messages: Vec<String>,
}

fn ensure_finite(m: &DMatrix<f64>, context: &str) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { context: context.into() });
    }
    Ok(())
}

fn ensure_shape(m: &DMatrix<f64>, rows: usize, cols: usize, context: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::Shape {
            context: context.into(),
            expected: format!("{rows}x{cols}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    ensure_finite(m, context)
}

fn ingest_symmetric(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let skew = asymmetry(m);
    if skew > SYMMETRY_TOL {
        return Err(Error::InvalidArgument(format!(
            "{context} is asymmetric by {skew:e} (tolerance {SYMMETRY_TOL:e})"
        )));
    }
    Ok(symmetrize(m))
}

impl LQProblem {
    /// Assemble a problem, enforcing the structural invariants: list lengths
    /// equal `m0`, shapes as declared, finite entries, and `Q`/`R` symmetric
    /// to within [`SYMMETRY_TOL`] (symmetrized on ingestion).
    pub fn new(
        dims: Dimensions,
        coeffs: RegimeCoefficients,
        mut cost: CostWeights,
        generator: SwitchingGenerator,
    ) -> Result<Self> {
        let Dimensions { n, m, m0 } = dims;
        if generator.m0() != m0 {
            return Err(Error::Shape {
                context: "generator".into(),
                expected: format!("{m0}x{m0}"),
                got: format!("{}x{}", generator.m0(), generator.m0()),
            });
        }
        for (name, fam, rows, cols) in [
            ("A", &coeffs.a, n, n),
            ("B", &coeffs.b, n, m),
            ("C", &coeffs.c, n, n),
            ("D", &coeffs.d, n, m),
            ("Q", &cost.q, n, n),
            ("S", &cost.s, m, n),
            ("R", &cost.r, m, m),
        ] {
            if fam.len() != m0 {
                return Err(Error::Shape {
                    context: name.into(),
                    expected: format!("{m0} regimes"),
                    got: format!("{} regimes", fam.len()),
                });
            }
            for (i, mat) in fam.iter().enumerate() {
                ensure_shape(mat, rows, cols, &format!("{name}({})", i + 1))?;
            }
        }
        for i in 0..m0 {
            cost.q[i] = ingest_symmetric(&cost.q[i], &format!("Q({})", i + 1))?;
            cost.r[i] = ingest_symmetric(&cost.r[i], &format!("R({})", i + 1))?;
        }
        Ok(Self { dims, coeffs, cost, generator })
    }

    /// A zero gain family, one `m×n` zero matrix per regime.
    pub fn zero_gains(&self) -> Vec<DMatrix<f64>> {
        (0..self.dims.m0)
            .map(|_| DMatrix::zeros(self.dims.m, self.dims.n))
            .collect()
    }

    fn check_gain_shapes(&self, theta: &[DMatrix<f64>]) -> Result<()> {
        if theta.len() != self.dims.m0 {
            return Err(Error::Shape {
                context: "gain family".into(),
                expected: format!("{} regimes", self.dims.m0),
                got: format!("{} regimes", theta.len()),
            });
        }
        for (i, th) in theta.iter().enumerate() {
            ensure_shape(th, self.dims.m, self.dims.n, &format!("Theta({})", i + 1))?;
        }
        Ok(())
    }

    /// Closed-loop coefficients `A + BΘ` and `C + DΘ` per regime.
    pub fn shifted_coefficients(&self, theta: &[DMatrix<f64>]) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
        self.check_gain_shapes(theta)?;
        let a = (0..self.dims.m0)
            .map(|i| &self.coeffs.a[i] + &self.coeffs.b[i] * &theta[i])
            .collect();
        let c = (0..self.dims.m0)
            .map(|i| &self.coeffs.c[i] + &self.coeffs.d[i] * &theta[i])
            .collect();
        Ok((a, c))
    }
}

/// Run the assumption checks and collect margins.
///
/// `ok` is true iff the generator rows sum to zero with strictly positive
/// off-diagonal rates, and in every regime `Q ≻ 0`, `R ≻ 0`, and
/// `Q − SᵀR⁻¹S ≻ 0`. The report is a pure function of the problem.
pub fn validate_problem(p: &LQProblem) -> ValidationReport {
    let mut messages = Vec::new();
    let gen_findings = p.generator.check();
    let generator_ok = gen_findings.is_empty();
    messages.extend(gen_findings);

    let mut a3_margins = Vec::with_capacity(p.dims.m0);
    let mut a3_ok = true;
    for i in 0..p.dims.m0 {
        let r_min = min_eigenvalue(&p.cost.r[i]);
        let q_min = min_eigenvalue(&p.cost.q[i]);
        if r_min <= 0.0 {
            a3_ok = false;
            messages.push(format!("regime {}: R not positive definite (min eigenvalue {r_min})", i + 1));
        }
        if q_min <= 0.0 {
            a3_ok = false;
            messages.push(format!("regime {}: Q not positive definite (min eigenvalue {q_min})", i + 1));
        }
        let schur_min = match sym_inverse(&p.cost.r[i], 1e-14) {
            Some((r_inv, _)) => {
                let schur = &p.cost.q[i] - p.cost.s[i].transpose() * r_inv * &p.cost.s[i];
                let schur_min = min_eigenvalue(&schur);
                if schur_min <= 0.0 {
                    a3_ok = false;
                    messages.push(format!(
                        "regime {}: Q - S'R^-1 S not positive definite (min eigenvalue {schur_min})",
                        i + 1
                    ));
                }
                schur_min
            }
            None => {
                a3_ok = false;
                messages.push(format!("regime {}: R is numerically singular", i + 1));
                f64::NAN
            }
        };
        a3_margins.push((r_min, schur_min));
    }

    ValidationReport {
        ok: generator_ok && a3_ok,
        a3_margins,
        generator_ok,
        messages,
    }
}

/// Per-regime pair `(λ_min(R), λ_min(Q − SᵀR⁻¹S))`.
///
/// The minimum of these over regimes is the uniform-convexity constant of
/// the cost. Errors when some `R(ι)` is singular.
pub fn convexity_margin(cost: &CostWeights) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(cost.r.len());
    for i in 0..cost.r.len() {
        let (r_inv, _) = sym_inverse(&cost.r[i], 1e-14).ok_or_else(|| Error::Singular {
            context: "convexity margin: R".into(),
            regime: i + 1,
            min_eig: min_eigenvalue(&cost.r[i]),
        })?;
        let schur = &cost.q[i] - cost.s[i].transpose() * &r_inv * &cost.s[i];
        out.push((min_eigenvalue(&cost.r[i]), min_eigenvalue(&schur)));
    }
    Ok(out)
}

/// Apply the feedback shift `u = ΘX + v`: the returned problem has
/// `A ← A + BΘ`, `C ← C + DΘ`, `Q ← Q + ΘᵀS + SᵀΘ + ΘᵀRΘ`, `S ← S + RΘ`;
/// `R` and the generator are unchanged.
pub fn apply_feedback_shift(p: &LQProblem, theta: &[DMatrix<f64>]) -> Result<LQProblem> {
    let (a, c) = p.shifted_coefficients(theta)?;
    let mut q = Vec::with_capacity(p.dims.m0);
    let mut s = Vec::with_capacity(p.dims.m0);
    for i in 0..p.dims.m0 {
        let th = &theta[i];
        let q_shift = &p.cost.q[i]
            + th.transpose() * &p.cost.s[i]
            + p.cost.s[i].transpose() * th
            + th.transpose() * &p.cost.r[i] * th;
        q.push(symmetrize(&q_shift));
        s.push(&p.cost.s[i] + &p.cost.r[i] * th);
    }
    Ok(LQProblem {
        dims: p.dims,
        coeffs: RegimeCoefficients {
            a,
            b: p.coeffs.b.clone(),
            c,
            d: p.coeffs.d.clone(),
        },
        cost: CostWeights { q, s, r: p.cost.r.clone() },
        generator: p.generator.clone(),
    })
}

/// Running cost `½(xᵀQ(ι)x + 2uᵀS(ι)x + uᵀR(ι)u)`.
pub fn stage_cost(p: &LQProblem, x: &DVector<f64>, regime: usize, u: &DVector<f64>) -> f64 {
    let q = &p.cost.q[regime];
    let s = &p.cost.s[regime];
    let r = &p.cost.r[regime];
    0.5 * ((q * x).dot(x) + 2.0 * (s * x).dot(u) + (r * u).dot(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar_problem(a: f64, b: f64, c: f64, d: f64, q: f64, s: f64, r: f64) -> LQProblem {
        presets::scalar_single_regime(a, b, c, d, q, s, r)
    }

    #[test]
    fn validate_accepts_definite_instance() {
        let p = scalar_problem(0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0);
        let rep = validate_problem(&p);
        assert!(rep.ok);
        assert!(rep.generator_ok);
        // S = 0, so the Schur margin is just the smallest eigenvalue of Q.
        assert_relative_eq!(rep.a3_margins[0].1, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn validate_rejects_negative_control_weight() {
        // sign-indefinite cost: inf J = -infinity, so validation must fail on R
        let p = scalar_problem(0.0, 0.0, 0.0, 1.0, 1.0, 0.0, -1.0);
        let rep = validate_problem(&p);
        assert!(!rep.ok);
        assert!(rep.messages.iter().any(|m| m.contains("R not positive definite")));
    }

    #[test]
    fn validate_checks_generator_rows() {
        let p = presets::two_regime_scalar();
        let rep = validate_problem(&p);
        assert!(rep.generator_ok && rep.ok);

        let bad = SwitchingGenerator::new(DMatrix::from_row_slice(2, 2, &[-1.0, 1.1, 1.0, -1.0])).unwrap();
        let p_bad = LQProblem::new(p.dims, p.coeffs.clone(), p.cost.clone(), bad).unwrap();
        let rep = validate_problem(&p_bad);
        assert!(!rep.generator_ok && !rep.ok);
        assert!(rep.messages.iter().any(|m| m.contains("row 1")));
    }

    #[test]
    fn validation_is_pure() {
        let p = presets::two_regime_scalar();
        let r1 = validate_problem(&p);
        let r2 = validate_problem(&p);
        assert_eq!(format!("{r1:?}"), format!("{r2:?}"));
    }

    #[test]
    fn convexity_margin_scalar_cases() {
        for (q, s, r, want) in [
            (1.0, 0.0, 1.0, (1.0, 1.0)),
            (2.0, 1.0, 1.0, (1.0, 1.0)),
            (1.0, 1.0, 1.0, (1.0, 0.0)), // boundary: strict definiteness fails
        ] {
            let p = scalar_problem(0.0, 1.0, 0.0, 0.0, q, s, r);
            let m = convexity_margin(&p.cost).unwrap();
            assert_relative_eq!(m[0].0, want.0, epsilon = 1e-14);
            assert_relative_eq!(m[0].1, want.1, epsilon = 1e-14);
        }
    }

    #[test]
    fn convexity_margin_singular_r_names_regime() {
        let p = scalar_problem(0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        match convexity_margin(&p.cost) {
            Err(Error::Singular { regime, .. }) => assert_eq!(regime, 1),
            other => panic!("expected singular R error, got {other:?}"),
        }
    }

    #[test]
    fn zero_shift_is_identity() {
        let p = presets::two_regime_scalar();
        let shifted = apply_feedback_shift(&p, &p.zero_gains()).unwrap();
        for i in 0..p.dims.m0 {
            assert_relative_eq!(shifted.coeffs.a[i], p.coeffs.a[i], epsilon = 1e-15);
            assert_relative_eq!(shifted.cost.q[i], p.cost.q[i], epsilon = 1e-15);
            assert_relative_eq!(shifted.cost.s[i], p.cost.s[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn scalar_shift_values() {
        let p = scalar_problem(0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0);
        let theta = vec![DMatrix::from_element(1, 1, -1.0)];
        let shifted = apply_feedback_shift(&p, &theta).unwrap();
        assert_relative_eq!(shifted.coeffs.a[0][(0, 0)], -1.0, epsilon = 1e-15);
        assert_relative_eq!(shifted.cost.q[0][(0, 0)], 2.0, epsilon = 1e-15);
        assert_relative_eq!(shifted.cost.s[0][(0, 0)], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn stage_cost_values() {
        let p0 = scalar_problem(0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0);
        let zero = DVector::from_element(1, 0.0);
        assert_eq!(stage_cost(&p0, &zero, 0, &zero), 0.0);
        let x = DVector::from_element(1, 2.0);
        let u = DVector::from_element(1, 3.0);
        assert_relative_eq!(stage_cost(&p0, &x, 0, &u), 6.5, epsilon = 1e-14);

        let p1 = scalar_problem(0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0);
        let one = DVector::from_element(1, 1.0);
        assert_relative_eq!(stage_cost(&p1, &one, 0, &one), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn shape_and_finiteness_are_structural_errors() {
        let dims = Dimensions::new(1, 1, 1).unwrap();
        let coeffs = RegimeCoefficients {
            a: vec![DMatrix::zeros(2, 2)], // wrong shape
            b: vec![DMatrix::zeros(1, 1)],
            c: vec![DMatrix::zeros(1, 1)],
            d: vec![DMatrix::zeros(1, 1)],
        };
        let cost = CostWeights {
            q: vec![DMatrix::from_element(1, 1, 1.0)],
            s: vec![DMatrix::zeros(1, 1)],
            r: vec![DMatrix::from_element(1, 1, 1.0)],
        };
        let gen = SwitchingGenerator::new(DMatrix::zeros(1, 1)).unwrap();
        assert!(matches!(
            LQProblem::new(dims, coeffs, cost.clone(), gen.clone()),
            Err(Error::Shape { .. })
        ));

        let coeffs = RegimeCoefficients {
            a: vec![DMatrix::from_element(1, 1, f64::NAN)],
            b: vec![DMatrix::zeros(1, 1)],
            c: vec![DMatrix::zeros(1, 1)],
            d: vec![DMatrix::zeros(1, 1)],
        };
        assert!(matches!(
            LQProblem::new(dims, coeffs, cost, gen),
            Err(Error::NonFinite { .. })
        ));
    }

    // Schur-complement invariance under feedback shifts, the identity
    // Q^Θ − (S^Θ)ᵀR⁻¹S^Θ = Q − SᵀR⁻¹S.
    proptest! {
        #[test]
        fn schur_complement_invariant_under_shift(
            th in proptest::collection::vec(-2.0f64..2.0, 2),
            s in proptest::collection::vec(-0.4f64..0.4, 2),
        ) {
            let p = presets::two_regime_scalar();
            let mut cost = p.cost.clone();
            cost.s = s.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect();
            let p = LQProblem::new(p.dims, p.coeffs.clone(), cost, p.generator.clone()).unwrap();
            let theta: Vec<_> = th.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect();
            let shifted = apply_feedback_shift(&p, &theta).unwrap();
            let before = convexity_margin(&p.cost).unwrap();
            let after = convexity_margin(&shifted.cost).unwrap();
            for (b, a) in before.iter().zip(after.iter()) {
                prop_assert!((b.1 - a.1).abs() < 1e-10);
            }
        }

        // With S = 0 the margins (λ_min R, λ_min Q) give the exact pointwise
        // coercivity constant: 2·g >= ε (|x|² + |u|²).
        #[test]
        fn stage_cost_dominates_convexity_margin(x in -10.0f64..10.0, u in -10.0f64..10.0) {
            let p = presets::scalar_single_regime(0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 1.0);
            let margins = convexity_margin(&p.cost).unwrap();
            let eps = margins
                .iter()
                .map(|(a, b)| a.min(*b))
                .fold(f64::INFINITY, f64::min);
            let xv = DVector::from_element(1, x);
            let uv = DVector::from_element(1, u);
            let g = stage_cost(&p, &xv, 0, &uv);
            prop_assert!(g >= 0.5 * eps * (x * x + u * u) - 1e-9);
        }

        // For S ≠ 0 the exact pointwise constant is the smallest eigenvalue
        // of the joint weight block [[Q, Sᵀ], [S, R]].
        #[test]
        fn stage_cost_dominates_block_eigenvalue(x in -10.0f64..10.0, u in -10.0f64..10.0) {
            let p = presets::scalar_single_regime(0.0, 1.0, 0.0, 0.0, 2.0, 0.5, 1.0);
            let block = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
            let eps = crate::linalg::min_eigenvalue(&block);
            prop_assert!(eps > 0.0);
            let xv = DVector::from_element(1, x);
            let uv = DVector::from_element(1, u);
            let g = stage_cost(&p, &xv, 0, &uv);
            prop_assert!(g >= 0.5 * eps * (x * x + u * u) - 1e-9);
        }
    }
}
