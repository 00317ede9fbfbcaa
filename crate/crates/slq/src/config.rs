//! Problem files: a single JSON document with per-regime matrices as
//! row-major nested arrays.
//!
//! ```json
//! {
//!   "name": "my-problem",
//!   "dims": { "n": 1, "m": 1, "m0": 2 },
//!   "regimes": [
//!     { "A": [[0.0]], "B": [[1.0]], "C": [[0.0]], "D": [[0.0]],
//!       "Q": [[1.0]], "S": [[0.0]], "R": [[1.0]] },
//!     ...
//!   ],
//!   "generator": [[-1.0, 1.0], [1.0, -1.0]]
//! }
//! ```
//!
//! Regime indices are 1-based in files and messages; this parser is the
//! boundary where they become 0-based.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::{CostWeights, Dimensions, LQProblem, RegimeCoefficients, SwitchingGenerator};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct DimsFile {
    n: usize,
    m: usize,
    m0: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegimeFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "S")]
    s: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    dims: DimsFile,
    regimes: Vec<RegimeFile>,
    generator: Vec<Vec<f64>>,
}

fn rows_to_matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Config(format!("{field}: empty matrix")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("{field}: ragged or empty rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Parse a problem document, returning the instance and its optional name.
pub fn parse_problem(text: &str) -> Result<(LQProblem, Option<String>)> {
    let file: ProblemFile = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    let dims = Dimensions::new(file.dims.n, file.dims.m, file.dims.m0)
        .map_err(|e| Error::Config(e.to_string()))?;
    if file.regimes.len() != dims.m0 {
        return Err(Error::Config(format!(
            "regimes: expected {} entries, got {}",
            dims.m0,
            file.regimes.len()
        )));
    }
    let mut coeffs = RegimeCoefficients { a: vec![], b: vec![], c: vec![], d: vec![] };
    let mut cost = CostWeights { q: vec![], s: vec![], r: vec![] };
    for (k, reg) in file.regimes.iter().enumerate() {
        let at = |f: &str| format!("regimes[{}].{f}", k + 1);
        coeffs.a.push(rows_to_matrix(&reg.a, &at("A"))?);
        coeffs.b.push(rows_to_matrix(&reg.b, &at("B"))?);
        coeffs.c.push(rows_to_matrix(&reg.c, &at("C"))?);
        coeffs.d.push(rows_to_matrix(&reg.d, &at("D"))?);
        cost.q.push(rows_to_matrix(&reg.q, &at("Q"))?);
        cost.s.push(rows_to_matrix(&reg.s, &at("S"))?);
        cost.r.push(rows_to_matrix(&reg.r, &at("R"))?);
    }
    let generator = SwitchingGenerator::new(rows_to_matrix(&file.generator, "generator")?)?;
    let problem = LQProblem::new(dims, coeffs, cost, generator)?;
    Ok((problem, file.name))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Serialize a problem back into the config format (pretty-printed).
pub fn problem_to_json(p: &LQProblem, name: Option<&str>) -> String {
    let file = ProblemFile {
        name: name.map(str::to_owned),
        dims: DimsFile { n: p.dims.n, m: p.dims.m, m0: p.dims.m0 },
        regimes: (0..p.dims.m0)
            .map(|i| RegimeFile {
                a: matrix_to_rows(&p.coeffs.a[i]),
                b: matrix_to_rows(&p.coeffs.b[i]),
                c: matrix_to_rows(&p.coeffs.c[i]),
                d: matrix_to_rows(&p.coeffs.d[i]),
                q: matrix_to_rows(&p.cost.q[i]),
                s: matrix_to_rows(&p.cost.s[i]),
                r: matrix_to_rows(&p.cost.r[i]),
            })
            .collect(),
        generator: matrix_to_rows(p.generator.rates()),
    };
    serde_json::to_string_pretty(&file).expect("problem serialization cannot fail")
}
