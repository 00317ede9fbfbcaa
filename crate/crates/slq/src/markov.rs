//! Chain coupling, path sampling, and transition probabilities.
//!
//! The coupling operator acts on per-regime symmetric families as
//! `Λ[Σ](ι) = Σ_ȷ λ_ιȷ Σ(ȷ)`; because the generator rows sum to zero it is
//! linear and annihilates constant families. Paths are sampled with exact
//! exponential holding times (never grid-snapped), and the matrix
//! exponential `exp(tΛ)` serves as the reference law for validating the
//! sampler.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::SwitchingGenerator;
use crate::{Error, Result};

/// One sampled chain trajectory on `[t0, t1]`, càdlàg by construction:
/// the regime is constant on `[jump_k, jump_{k+1})`.
#[derive(Debug, Clone)]
pub struct ChainPath {
    /// Strictly increasing jump times in `(t0, t1]`.
    pub jump_times: Vec<f64>,
    /// Visited regimes, one more than the number of jumps; consecutive
    /// entries differ.
    pub states: Vec<usize>,
    pub t0: f64,
    pub t1: f64,
}

impl ChainPath {
    /// Regime at time `t` (right-continuous).
    pub fn regime_at(&self, t: f64) -> usize {
        let idx = self.jump_times.partition_point(|&jt| jt <= t);
        self.states[idx]
    }

    /// Constant-regime segments `(start, end, regime)` covering `[t0, t1]`.
    pub fn segments(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::with_capacity(self.jump_times.len() + 1);
        let mut start = self.t0;
        for (k, &jt) in self.jump_times.iter().enumerate() {
            out.push((start, jt, self.states[k]));
            start = jt;
        }
        if start < self.t1 || out.is_empty() {
            out.push((start, self.t1, *self.states.last().unwrap()));
        }
        out
    }

    /// Fraction of `[t0, t1]` spent in each regime.
    pub fn occupation(&self, m0: usize) -> Vec<f64> {
        let mut occ = vec![0.0; m0];
        for (a, b, r) in self.segments() {
            occ[r] += b - a;
        }
        let span = self.t1 - self.t0;
        if span > 0.0 {
            for o in &mut occ {
                *o /= span;
            }
        }
        occ
    }
}

/// Apply the coupling operator: `out(ι) = Σ_ȷ λ_ιȷ sigma(ȷ)`.
///
/// The output is symmetric whenever the input family is.
pub fn lambda_apply(gen: &SwitchingGenerator, sigma: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let m0 = gen.m0();
    assert_eq!(sigma.len(), m0, "sigma family must have one entry per regime");
    let (r, c) = (sigma[0].nrows(), sigma[0].ncols());
    (0..m0)
        .map(|i| {
            let mut acc = DMatrix::zeros(r, c);
            for (j, s) in sigma.iter().enumerate() {
                acc += s * gen.rate(i, j);
            }
            acc
        })
        .collect()
}

/// Sample one path with the given generator, deterministic in the rng state.
///
/// Holding time in regime `ι` is exponential with rate `−λ_ιι`; the next
/// regime `ȷ ≠ ι` is chosen with probability `λ_ιȷ/(−λ_ιι)`. An absorbing
/// regime (zero exit rate) simply ends the jump sequence. A jump landing
/// exactly on `t1` is retained, consistent with right-continuity.
pub fn sample_chain_with<R: Rng>(
    rng: &mut R,
    gen: &SwitchingGenerator,
    start_regime: usize,
    t0: f64,
    t1: f64,
) -> Result<ChainPath> {
    if !(t0 < t1) {
        return Err(Error::InvalidArgument(format!(
            "chain sampling needs t0 < t1, got [{t0}, {t1}]"
        )));
    }
    let m0 = gen.m0();
    if start_regime >= m0 {
        return Err(Error::InvalidArgument(format!(
            "start regime {} out of range 1..={m0}",
            start_regime + 1
        )));
    }
    let mut jump_times = Vec::new();
    let mut states = vec![start_regime];
    let mut t = t0;
    let mut regime = start_regime;
    loop {
        let rate = -gen.rate(regime, regime);
        if rate <= 0.0 {
            break; // absorbing
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / rate;
        if t > t1 {
            break;
        }
        // next regime by inverse cdf over the off-diagonal rates
        let pick: f64 = rng.random::<f64>() * rate;
        let mut acc = 0.0;
        let mut next = regime;
        for j in 0..m0 {
            if j == regime {
                continue;
            }
            acc += gen.rate(regime, j);
            if pick < acc {
                next = j;
                break;
            }
        }
        if next == regime {
            // roundoff at the top of the cdf: take the last off-diagonal state
            next = (0..m0).rev().find(|&j| j != regime).unwrap();
        }
        jump_times.push(t);
        states.push(next);
        regime = next;
    }
    Ok(ChainPath { jump_times, states, t0, t1 })
}

/// Seeded convenience wrapper around [`sample_chain_with`].
pub fn sample_chain_path(
    gen: &SwitchingGenerator,
    start_regime: usize,
    t0: f64,
    t1: f64,
    rng_seed: u64,
) -> Result<ChainPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_chain_with(&mut rng, gen, start_regime, t0, t1)
}

/// `exp(tΛ)` by scaling and squaring with a truncated series.
///
/// The scaled norm is kept below ½ so the series converges to machine
/// precision in a few terms; tiny negative entries from roundoff are
/// clamped to zero. Rows sum to one to ~1e−12.
pub fn transition_matrix(gen: &SwitchingGenerator, t: f64) -> Result<DMatrix<f64>> {
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("transition time must be >= 0, got {t}")));
    }
    let m0 = gen.m0();
    let scaled = gen.rates() * t;
    let norm = scaled.amax() * m0 as f64;
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let base = scaled / 2f64.powi(squarings as i32);

    let mut result = DMatrix::identity(m0, m0);
    let mut term = DMatrix::identity(m0, m0);
    for k in 1..=64 {
        term = &term * &base / k as f64;
        result += &term;
        if term.amax() <= 1e-18 * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    for x in result.iter_mut() {
        if *x < 0.0 {
            debug_assert!(*x > -1e-12, "transition entry below roundoff: {x}");
            *x = 0.0;
        }
    }
    Ok(result)
}

/// Stationary distribution of an irreducible generator, solving `πΛ = 0`
/// with `Σπ = 1`.
pub fn stationary_distribution(gen: &SwitchingGenerator) -> Result<Vec<f64>> {
    let m0 = gen.m0();
    let mut a = gen.rates().transpose();
    for j in 0..m0 {
        a[(m0 - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::zeros(m0);
    b[m0 - 1] = 1.0;
    let lu = a.lu();
    let pi = lu.solve(&b).ok_or_else(|| Error::Singular {
        context: "stationary distribution".into(),
        regime: 0,
        min_eig: 0.0,
    })?;
    Ok(pi.iter().copied().collect())
}
