//! Monte Carlo simulation of the closed-loop switched SDE.
//!
//! Paths use Euler–Maruyama with steps subdivided exactly at the chain jump
//! times, so the regime is constant within every step and the scheme is
//! exact in the switching dimension (weak order one overall). Path `k`
//! derives its chain and Brownian streams from `derive_seed(seed, k, ·)`,
//! making every path reproducible independently of the path count and
//! letting coupled systems share their noise (common random numbers) the
//! way the finite- and infinite-horizon optimal trajectories share
//! `(W, α)`. Statistics accumulate in fixed-size chunks with a
//! deterministic merge, so results do not depend on thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::markov::{sample_chain_with, ChainPath};
use crate::model::{stage_cost, InitialTriple, LQProblem};
use crate::stability::GainSchedule;
use crate::{Error, Result};

const CHUNK: usize = 256;
const OVERFLOW_LIMIT: f64 = 1e100;

/// Monte Carlo settings; the scheme is fixed (Euler–Maruyama).
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
        }
        Ok(())
    }
}

/// Streams carved out of the base seed, one pair per path.
#[derive(Clone, Copy)]
pub enum Stream {
    Chain = 0,
    Brownian = 1,
    AltChain = 2,
    AltBrownian = 3,
}

/// Documented seed-splitting function: two rounds of the splitmix64
/// finalizer over the (base, path, stream) triple.
pub fn derive_seed(base: u64, path: u64, stream: u64) -> u64 {
    let mut z = base
        ^ path.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    for _ in 0..2 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn path_rng(cfg: &SimulationConfig, path: usize, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, path as u64, stream as u64))
}

/// One sampled trajectory on a grid, for cost estimation and export.
#[derive(Debug, Clone)]
pub struct SampledPath {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub regimes: Vec<usize>,
}

/// Monte Carlo statistics of one closed loop.
#[derive(Debug, Clone)]
pub struct PathStats {
    pub times: Vec<f64>,
    /// `E|X(t)|²` with standard errors, per grid point.
    pub mean_sq_state: Vec<(f64, f64)>,
    /// Trapezoid-rule cost estimate with standard error.
    pub mean_cost: (f64, f64),
    /// Time-weighted fraction of the horizon spent in each regime.
    pub occupation: Vec<f64>,
}

/// Monte Carlo gap statistics of a coupled pair of closed loops.
#[derive(Debug, Clone)]
pub struct CoupledGapStats {
    pub times: Vec<f64>,
    /// `E|X_T(s) − X_∞(s)|²` with standard errors.
    pub gap_state: Vec<(f64, f64)>,
    /// `E|u_T(s) − u_∞(s)|²` with standard errors.
    pub gap_control: Vec<(f64, f64)>,
}

/// Evolve several systems through one path of the chain with shared
/// Brownian increments, returning each system's state at the grid points.
///
/// The segment structure (jump times, grid times, dt subdivision) depends
/// only on the chain, so all systems see identical increments.
fn evolve_shared<R: Rng>(
    p: &LQProblem,
    gains: &[&GainSchedule<'_>],
    x0s: &[DVector<f64>],
    chain: &ChainPath,
    grid: &[f64],
    dt: f64,
    rng: &mut R,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let n_sys = gains.len();
    let mut xs: Vec<DVector<f64>> = x0s.to_vec();
    let mut recorded: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(grid.len()); n_sys];
    let mut gi = 0;
    while gi < grid.len() && grid[gi] <= chain.t0 {
        for (rec, x) in recorded.iter_mut().zip(xs.iter()) {
            rec.push(x.clone());
        }
        gi += 1;
    }

    for (seg_start, seg_end, regime) in chain.segments() {
        if seg_end <= seg_start {
            continue;
        }
        // stop points: grid points inside the segment, then the segment end
        let mut stops: Vec<f64> = Vec::new();
        let mut gj = gi;
        while gj < grid.len() && grid[gj] <= seg_end + 1e-14 {
            if grid[gj] > seg_start {
                stops.push(grid[gj].min(seg_end));
            }
            gj += 1;
        }
        if stops.last().map_or(true, |&s| s < seg_end - 1e-14) {
            stops.push(seg_end);
        }

        let mut s = seg_start;
        for &stop in &stops {
            if stop > s {
                let nsub = ((stop - s) / dt).ceil().max(1.0) as usize;
                let h = (stop - s) / nsub as f64;
                let sqrt_h = h.sqrt();
                for k in 0..nsub {
                    let t_sub = s + k as f64 * h;
                    let dw: f64 = sqrt_h * rng.sample::<f64, _>(StandardNormal);
                    for (sys, x) in xs.iter_mut().enumerate() {
                        let theta = &gains[sys].at(t_sub)?[regime];
                        let u = theta * &*x;
                        let drift = &p.coeffs.a[regime] * &*x + &p.coeffs.b[regime] * &u;
                        let diffusion = &p.coeffs.c[regime] * &*x + &p.coeffs.d[regime] * &u;
                        *x += drift * h + diffusion * dw;
                        if x.amax() > OVERFLOW_LIMIT || x.iter().any(|v| !v.is_finite()) {
                            return Err(Error::UnstableSimulation { t: t_sub });
                        }
                    }
                }
                s = stop;
            }
            // record systems at grid points reached
            while gi < grid.len() && (grid[gi] - stop).abs() <= 1e-12 {
                for (rec, x) in recorded.iter_mut().zip(xs.iter()) {
                    rec.push(x.clone());
                }
                gi += 1;
            }
        }
    }
    while gi < grid.len() {
        for (rec, x) in recorded.iter_mut().zip(xs.iter()) {
            rec.push(x.clone());
        }
        gi += 1;
    }
    Ok(recorded)
}

fn controls_along(
    p: &LQProblem,
    gains: &GainSchedule<'_>,
    chain: &ChainPath,
    grid: &[f64],
    states: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let _ = p;
    grid.iter()
        .zip(states)
        .map(|(&t, x)| {
            let regime = chain.regime_at(t.min(chain.t1));
            Ok(&gains.at(t)?[regime] * x)
        })
        .collect()
}

/// Trapezoid-rule estimate of the expected cost over `[t0, t1]` from
/// sampled trajectories: mean and standard error across paths.
pub fn estimate_cost(p: &LQProblem, paths: &[SampledPath], t0: f64, t1: f64) -> Result<(f64, f64)> {
    if paths.is_empty() {
        return Err(Error::InsufficientData("no paths to estimate a cost from".into()));
    }
    let mut costs = Vec::with_capacity(paths.len());
    for path in paths {
        let idx: Vec<usize> = (0..path.times.len())
            .filter(|&k| path.times[k] >= t0 - 1e-12 && path.times[k] <= t1 + 1e-12)
            .collect();
        if idx.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "path has {} samples in [{t0}, {t1}], need at least 2",
                idx.len()
            )));
        }
        let g: Vec<f64> = idx
            .iter()
            .map(|&k| stage_cost(p, &path.states[k], path.regimes[k], &path.controls[k]))
            .collect();
        let mut acc = 0.0;
        for w in 0..idx.len() - 1 {
            acc += 0.5 * (g[w] + g[w + 1]) * (path.times[idx[w + 1]] - path.times[idx[w]]);
        }
        costs.push(acc);
    }
    Ok(mean_se(&costs))
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct Accumulator {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: usize,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self { sum: vec![0.0; len], sum_sq: vec![0.0; len], count: 0 }
    }

    fn add(&mut self, values: &[f64]) {
        for (k, v) in values.iter().enumerate() {
            self.sum[k] += v;
            self.sum_sq[k] += v * v;
        }
        self.count += 1;
    }

    fn merge(&mut self, other: &Accumulator) {
        for k in 0..self.sum.len() {
            self.sum[k] += other.sum[k];
            self.sum_sq[k] += other.sum_sq[k];
        }
        self.count += other.count;
    }

    fn finish(&self) -> Vec<(f64, f64)> {
        let n = self.count as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(&s, &ss)| {
                let mean = s / n;
                let se = if self.count < 2 {
                    0.0
                } else {
                    (((ss - s * s / n) / (n - 1.0)).max(0.0) / n).sqrt()
                };
                (mean, se)
            })
            .collect()
    }
}

/// Simulate the loop closed by `gains` from a deterministic initial triple
/// and collect moment, cost, and occupation statistics on `grid`.
pub fn simulate_closed_loop(
    p: &LQProblem,
    gains: &GainSchedule<'_>,
    init: &InitialTriple,
    horizon: f64,
    grid: &[f64],
    cfg: &SimulationConfig,
) -> Result<PathStats> {
    cfg.validate()?;
    check_grid(grid, init.t, horizon)?;
    if init.regime >= p.dims.m0 {
        return Err(Error::InvalidArgument(format!(
            "initial regime {} out of range 1..={}",
            init.regime + 1,
            p.dims.m0
        )));
    }
    let t_end = *grid.last().unwrap();
    let n_grid = grid.len();
    let m0 = p.dims.m0;

    let chunk_results: Vec<(Accumulator, Vec<f64>, Vec<f64>)> = (0..cfg.n_paths)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|paths| {
            let mut acc = Accumulator::new(n_grid);
            let mut occ = vec![0.0; m0];
            let mut costs = Vec::with_capacity(paths.len());
            for &k in paths {
                let mut chain_rng = path_rng(cfg, k, Stream::Chain);
                let mut brown_rng = path_rng(cfg, k, Stream::Brownian);
                let chain = sample_chain_with(&mut chain_rng, &p.generator, init.regime, init.t, t_end)?;
                let states = evolve_shared(p, &[gains], &[init.x.clone()], &chain, grid, cfg.dt, &mut brown_rng)?
                    .pop()
                    .unwrap();
                let xsq: Vec<f64> = states.iter().map(|x| x.norm_squared()).collect();
                acc.add(&xsq);
                let controls = controls_along(p, gains, &chain, grid, &states)?;
                let regimes: Vec<usize> = grid.iter().map(|&t| chain.regime_at(t.min(chain.t1))).collect();
                let path = SampledPath { times: grid.to_vec(), states, controls, regimes };
                costs.push(estimate_cost(p, &[path], init.t, t_end)?.0);
                for (r, o) in chain.occupation(m0).iter().enumerate() {
                    occ[r] += o;
                }
            }
            Ok((acc, costs, occ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut acc = Accumulator::new(n_grid);
    let mut costs = Vec::with_capacity(cfg.n_paths);
    let mut occ = vec![0.0; m0];
    for (a, c, o) in &chunk_results {
        acc.merge(a);
        costs.extend_from_slice(c);
        for (r, v) in o.iter().enumerate() {
            occ[r] += v;
        }
    }
    for o in &mut occ {
        *o /= cfg.n_paths as f64;
    }
    Ok(PathStats {
        times: grid.to_vec(),
        mean_sq_state: acc.finish(),
        mean_cost: mean_se(&costs),
        occupation: occ,
    })
}

/// How the two systems of a coupled pair are driven.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum NoiseCoupling {
    /// Identical Brownian increments and one shared chain path (the
    /// coupling used by the turnpike bound).
    Common,
    /// Fresh chain and Brownian streams for the second system; only useful
    /// as a variance baseline.
    Independent,
}

/// Drive the finite-horizon loop (`gains_t`) and the stationary loop
/// (`gains_inf`) with common random numbers and collect gap statistics.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled(
    p: &LQProblem,
    gains_t: &GainSchedule<'_>,
    gains_inf: &GainSchedule<'_>,
    x_t: &DVector<f64>,
    x_inf: &DVector<f64>,
    regime: usize,
    t: f64,
    horizon: f64,
    grid: &[f64],
    cfg: &SimulationConfig,
) -> Result<CoupledGapStats> {
    simulate_coupled_with(
        p,
        gains_t,
        gains_inf,
        x_t,
        x_inf,
        regime,
        t,
        horizon,
        grid,
        cfg,
        NoiseCoupling::Common,
    )
}

/// [`simulate_coupled`] with an explicit noise-coupling mode.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled_with(
    p: &LQProblem,
    gains_t: &GainSchedule<'_>,
    gains_inf: &GainSchedule<'_>,
    x_t: &DVector<f64>,
    x_inf: &DVector<f64>,
    regime: usize,
    t: f64,
    horizon: f64,
    grid: &[f64],
    cfg: &SimulationConfig,
    coupling: NoiseCoupling,
) -> Result<CoupledGapStats> {
    cfg.validate()?;
    check_grid(grid, t, horizon)?;
    let t_end = *grid.last().unwrap();
    let n_grid = grid.len();

    let chunk_results: Vec<(Accumulator, Accumulator)> = (0..cfg.n_paths)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|paths| {
            let mut acc_state = Accumulator::new(n_grid);
            let mut acc_control = Accumulator::new(n_grid);
            for &k in paths {
                let mut chain_rng = path_rng(cfg, k, Stream::Chain);
                let mut brown_rng = path_rng(cfg, k, Stream::Brownian);
                let chain = sample_chain_with(&mut chain_rng, &p.generator, regime, t, t_end)?;

                let (states_t, states_inf, chain_inf) = match coupling {
                    NoiseCoupling::Common => {
                        let mut both = evolve_shared(
                            p,
                            &[gains_t, gains_inf],
                            &[x_t.clone(), x_inf.clone()],
                            &chain,
                            grid,
                            cfg.dt,
                            &mut brown_rng,
                        )?;
                        let inf = both.pop().unwrap();
                        let fin = both.pop().unwrap();
                        (fin, inf, chain.clone())
                    }
                    NoiseCoupling::Independent => {
                        let fin = evolve_shared(p, &[gains_t], &[x_t.clone()], &chain, grid, cfg.dt, &mut brown_rng)?
                            .pop()
                            .unwrap();
                        let mut chain2_rng = path_rng(cfg, k, Stream::AltChain);
                        let mut brown2_rng = path_rng(cfg, k, Stream::AltBrownian);
                        let chain2 =
                            sample_chain_with(&mut chain2_rng, &p.generator, regime, t, t_end)?;
                        let inf = evolve_shared(p, &[gains_inf], &[x_inf.clone()], &chain2, grid, cfg.dt, &mut brown2_rng)?
                            .pop()
                            .unwrap();
                        (fin, inf, chain2)
                    }
                };

                let mut gap_x = Vec::with_capacity(n_grid);
                let mut gap_u = Vec::with_capacity(n_grid);
                for (gi, &g) in grid.iter().enumerate() {
                    gap_x.push((&states_t[gi] - &states_inf[gi]).norm_squared());
                    let r_t = chain.regime_at(g.min(chain.t1));
                    let r_i = chain_inf.regime_at(g.min(chain_inf.t1));
                    let u_t = &gains_t.at(g)?[r_t] * &states_t[gi];
                    let u_i = &gains_inf.at(g)?[r_i] * &states_inf[gi];
                    gap_u.push((u_t - u_i).norm_squared());
                }
                acc_state.add(&gap_x);
                acc_control.add(&gap_u);
            }
            Ok((acc_state, acc_control))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut acc_state = Accumulator::new(n_grid);
    let mut acc_control = Accumulator::new(n_grid);
    for (a, b) in &chunk_results {
        acc_state.merge(a);
        acc_control.merge(b);
    }
    Ok(CoupledGapStats {
        times: grid.to_vec(),
        gap_state: acc_state.finish(),
        gap_control: acc_control.finish(),
    })
}

fn check_grid(grid: &[f64], t0: f64, horizon: f64) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument("simulation grid needs at least two points".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("simulation grid must be strictly increasing".into()));
    }
    if (grid[0] - t0).abs() > 1e-12 || *grid.last().unwrap() > horizon + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "simulation grid must start at {t0} and stay within the horizon {horizon}"
        )));
    }
    Ok(())
}
