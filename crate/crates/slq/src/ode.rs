//! Embedded Runge–Kutta 4(5) integrator with PI step control and cubic
//! Hermite dense output.
//!
//! This is the shared workhorse behind the Riccati and moment solvers. The
//! dynamics there are smooth and non-stiff under the standing definiteness
//! assumption, so an explicit Dormand–Prince pair is appropriate. Requested
//! output points are evaluated inside accepted steps by cubic Hermite
//! interpolation, whose end derivatives come for free from the right-hand
//! side (FSAL), giving fourth-order interpolation. Callers that need tight
//! dense-output accuracy cap the step size through [`OdeOptions::h_max`].

use nalgebra::DVector;

use crate::{Error, Result};

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order weights equal the last A row (FSAL); 4th-order weights below.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub h_init: Option<f64>,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            h_max: f64::INFINITY,
            h_init: None,
            max_steps: 20_000_000,
        }
    }

    pub fn h_max(mut self, h: f64) -> Self {
        self.h_max = h;
        self
    }
}

pub struct Integration {
    pub y_end: DVector<f64>,
    /// Solution at the requested grid points, same order as the grid.
    pub at_grid: Vec<DVector<f64>>,
    pub steps: usize,
}

fn hermite(t: f64, t0: f64, t1: f64, y0: &DVector<f64>, f0: &DVector<f64>, y1: &DVector<f64>, f1: &DVector<f64>) -> DVector<f64> {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    y0 * h00 + f0 * (h10 * h) + y1 * h01 + f1 * (h11 * h)
}

/// Integrate `y' = f(t, y)` from `span.0` to `span.1` (forward), recording
/// dense output at `grid` (ascending, inside the span). `post_step` runs on
/// every accepted step and may nudge the state (e.g. a projection within
/// roundoff of the invariant manifold).
pub fn integrate<F, P>(
    mut f: F,
    span: (f64, f64),
    y0: DVector<f64>,
    grid: &[f64],
    opts: &OdeOptions,
    mut post_step: P,
) -> Result<Integration>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    P: FnMut(f64, &mut DVector<f64>) -> Result<()>,
{
    let (t_start, t_end) = span;
    if t_end < t_start {
        return Err(Error::InvalidArgument(format!(
            "integration span must be forward, got [{t_start}, {t_end}]"
        )));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("output grid must be ascending".into()));
    }
    if let (Some(&lo), Some(&hi)) = (grid.first(), grid.last()) {
        if lo < t_start - 1e-12 || hi > t_end + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "output grid [{lo}, {hi}] escapes the span [{t_start}, {t_end}]"
            )));
        }
    }

    let dim = y0.len();
    let mut at_grid: Vec<DVector<f64>> = Vec::with_capacity(grid.len());
    let mut grid_idx = 0;
    while grid_idx < grid.len() && grid[grid_idx] <= t_start {
        at_grid.push(y0.clone());
        grid_idx += 1;
    }
    if t_end == t_start {
        return Ok(Integration { y_end: y0, at_grid, steps: 0 });
    }

    let mut t = t_start;
    let mut y = y0;
    let mut k: Vec<DVector<f64>> = vec![DVector::zeros(dim); 7];
    k[0] = f(t, &y)?;

    let span_len = t_end - t_start;
    let mut h = opts
        .h_init
        .unwrap_or(span_len / 100.0)
        .min(opts.h_max)
        .min(span_len);
    let mut err_prev: f64 = 1.0;
    let mut steps = 0usize;

    while t < t_end {
        if steps >= opts.max_steps {
            return Err(Error::StepLimit { t });
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t });
        }
        h = h.min(t_end - t);

        for i in 1..7 {
            let mut yi = y.clone();
            for j in 0..i {
                if A[i][j] != 0.0 {
                    yi.axpy(h * A[i][j], &k[j], 1.0);
                }
            }
            k[i] = f(t + C[i] * h, &yi)?;
        }
        // 5th-order solution (same as stage 7 argument thanks to FSAL)
        let mut y5 = y.clone();
        for j in 0..6 {
            if A[6][j] != 0.0 {
                y5.axpy(h * A[6][j], &k[j], 1.0);
            }
        }
        // embedded 4th-order solution for the error estimate
        let mut y4 = y.clone();
        for j in 0..7 {
            if B4[j] != 0.0 {
                y4.axpy(h * B4[j], &k[j], 1.0);
            }
        }

        let mut err_sq = 0.0;
        for i in 0..dim {
            let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            let e = (y5[i] - y4[i]) / sc;
            err_sq += e * e;
        }
        let err = (err_sq / dim as f64).sqrt().max(1e-16);

        if err <= 1.0 {
            let t_new = t + h;
            // dense output inside the accepted step
            while grid_idx < grid.len() && grid[grid_idx] <= t_new + 1e-14 {
                let g = grid[grid_idx].min(t_new);
                at_grid.push(hermite(g, t, t_new, &y, &k[0], &y5, &k[6]));
                grid_idx += 1;
            }
            t = t_new;
            y = y5;
            post_step(t, &mut y)?;
            k[0] = k[6].clone();
            steps += 1;

            let fac = 0.9 * err.powf(-0.14) * err_prev.powf(0.08);
            h = (h * fac.clamp(0.2, 5.0)).min(opts.h_max);
            err_prev = err;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
    }

    while grid_idx < grid.len() {
        at_grid.push(y.clone());
        grid_idx += 1;
    }
    Ok(Integration { y_end: y, at_grid, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_decay_to_tolerance() {
        let grid: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
        let run = integrate(
            |_, y| Ok(-y),
            (0.0, 5.0),
            DVector::from_element(1, 1.0),
            &grid,
            &OdeOptions::with_tol(1e-10).h_max(0.01),
            |_, _| Ok(()),
        )
        .unwrap();
        for (g, y) in grid.iter().zip(run.at_grid.iter()) {
            assert_relative_eq!(y[0], (-g).exp(), epsilon = 1e-9);
        }
        assert_relative_eq!(run.y_end[0], (-5.0f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn riccati_scalar_tanh() {
        // y' = 1 - y², y(0) = 0 has solution tanh(t)
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.05).collect();
        let run = integrate(
            |_, y: &DVector<f64>| Ok(DVector::from_element(1, 1.0 - y[0] * y[0])),
            (0.0, 5.0),
            DVector::zeros(1),
            &grid,
            &OdeOptions::with_tol(1e-10).h_max(0.01),
            |_, _| Ok(()),
        )
        .unwrap();
        for (g, y) in grid.iter().zip(run.at_grid.iter()) {
            assert!((y[0] - g.tanh()).abs() < 1e-9, "at t={g}: {} vs {}", y[0], g.tanh());
        }
    }

    #[test]
    fn grid_at_endpoints_is_exact() {
        let run = integrate(
            |_, y| Ok(-y),
            (0.0, 1.0),
            DVector::from_element(1, 2.0),
            &[0.0, 1.0],
            &OdeOptions::with_tol(1e-8),
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(run.at_grid[0][0], 2.0);
        assert_eq!(run.at_grid[1][0], run.y_end[0]);
    }

    #[test]
    fn empty_span_returns_initial_state() {
        let run = integrate(
            |_, y| Ok(-y),
            (1.0, 1.0),
            DVector::from_element(1, 3.0),
            &[1.0],
            &OdeOptions::with_tol(1e-8),
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(run.at_grid[0][0], 3.0);
        assert_eq!(run.steps, 0);
    }
}
