//! CSV and text emission for solver and simulation outputs.
//!
//! All numbers are written with Rust's shortest round-trip formatting,
//! '.' decimal separator, ',' delimiter, and LF line endings, so files are
//! byte-deterministic for fixed inputs. Regime columns are 1-based.

use std::fmt::Write as _;

use crate::markov::ChainPath;
use crate::riccati::{ARESolution, DRESolution};
use crate::simulate::{CoupledGapStats, PathStats};
use crate::stability::SecondMomentState;
use crate::turnpike::{GapKind, GapSeries};

fn matrix_rows(out: &mut String, t: Option<f64>, regime: usize, m: &nalgebra::DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            match t {
                Some(t) => writeln!(out, "{t},{},{i},{j},{}", regime + 1, m[(i, j)]).unwrap(),
                None => writeln!(out, "{},{i},{j},{}", regime + 1, m[(i, j)]).unwrap(),
            }
        }
    }
}

/// `P.csv`: columns `t,regime,row,col,value`.
pub fn dre_p_csv(sol: &DRESolution) -> String {
    let mut out = String::from("t,regime,row,col,value\n");
    for (k, &t) in sol.grid.iter().enumerate() {
        for (i, m) in sol.p[k].iter().enumerate() {
            matrix_rows(&mut out, Some(t), i, m);
        }
    }
    out
}

/// `Theta.csv`: columns `t,regime,row,col,value`.
pub fn dre_theta_csv(sol: &DRESolution) -> String {
    let mut out = String::from("t,regime,row,col,value\n");
    for (k, &t) in sol.grid.iter().enumerate() {
        for (i, m) in sol.theta[k].iter().enumerate() {
            matrix_rows(&mut out, Some(t), i, m);
        }
    }
    out
}

/// Stationary solution as a structured text document.
pub fn are_text(sol: &ARESolution) -> String {
    let mut out = String::new();
    writeln!(out, "residual_norm: {}", sol.residual_norm).unwrap();
    writeln!(out, "delta_margin: {}", sol.delta_margin).unwrap();
    writeln!(out, "closed_loop_rate: {}", sol.closed_loop_rate).unwrap();
    for (i, (p, th)) in sol.p.iter().zip(&sol.theta).enumerate() {
        writeln!(out, "regime: {}", i + 1).unwrap();
        writeln!(out, "P:").unwrap();
        for r in 0..p.nrows() {
            let row: Vec<String> = (0..p.ncols()).map(|c| p[(r, c)].to_string()).collect();
            writeln!(out, "  {}", row.join(" ")).unwrap();
        }
        writeln!(out, "Theta:").unwrap();
        for r in 0..th.nrows() {
            let row: Vec<String> = (0..th.ncols()).map(|c| th[(r, c)].to_string()).collect();
            writeln!(out, "  {}", row.join(" ")).unwrap();
        }
    }
    out
}

/// Mean-square statistics: columns `t,estimate,std_error`.
pub fn path_stats_csv(stats: &PathStats) -> String {
    let mut out = String::from("t,estimate,std_error\n");
    for (t, (m, se)) in stats.times.iter().zip(&stats.mean_sq_state) {
        writeln!(out, "{t},{m},{se}").unwrap();
    }
    out
}

/// Coupled gap statistics: two CSV documents `(state, control)`, each with
/// columns `t,estimate,std_error`.
pub fn coupled_gap_csv(stats: &CoupledGapStats) -> (String, String) {
    let mut state = String::from("t,estimate,std_error\n");
    let mut control = String::from("t,estimate,std_error\n");
    for (k, t) in stats.times.iter().enumerate() {
        writeln!(state, "{t},{},{}", stats.gap_state[k].0, stats.gap_state[k].1).unwrap();
        writeln!(control, "{t},{},{}", stats.gap_control[k].0, stats.gap_control[k].1).unwrap();
    }
    (state, control)
}

/// Gap series: abscissa column named for the kind, then the value.
pub fn gap_series_csv(series: &GapSeries) -> String {
    let abscissa_name = match series.kind {
        GapKind::RiccatiGap | GapKind::GainGap => "tau",
        GapKind::StateGap | GapKind::ControlGap => "elapsed",
        GapKind::IntegralGap => "horizon",
    };
    let mut out = format!("{abscissa_name},value\n");
    for (a, v) in series.abscissa.iter().zip(&series.values) {
        writeln!(out, "{a},{v}").unwrap();
    }
    out
}

/// Moment trajectory: columns `t,regime,row,col,value`.
pub fn moment_csv(traj: &[SecondMomentState]) -> String {
    let mut out = String::from("t,regime,row,col,value\n");
    for st in traj {
        for (i, m) in st.y.iter().enumerate() {
            matrix_rows(&mut out, Some(st.t), i, m);
        }
    }
    out
}

/// Mean-square trace of a moment trajectory: columns `t,mean_square`.
pub fn mean_square_csv(traj: &[SecondMomentState]) -> String {
    let mut out = String::from("t,mean_square\n");
    for st in traj {
        writeln!(out, "{},{}", st.t, st.mean_square()).unwrap();
    }
    out
}

/// One chain path: columns `time,regime`, one row per segment start.
pub fn chain_path_csv(path: &ChainPath) -> String {
    let mut out = String::from("time,regime\n");
    writeln!(out, "{},{}", path.t0, path.states[0] + 1).unwrap();
    for (k, t) in path.jump_times.iter().enumerate() {
        writeln!(out, "{t},{}", path.states[k + 1] + 1).unwrap();
    }
    out
}
