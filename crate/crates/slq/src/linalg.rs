//! Small dense-matrix helpers shared by the solvers.
//!
//! Per-regime families of symmetric matrices are flattened with the scaled
//! upper-triangle vectorization `svec` (off-diagonal entries scaled by √2),
//! which is an isometry: `⟨svec(A), svec(B)⟩ = tr(AB)`. Linear operators on
//! families expressed in this basis are similar to the true operators, so
//! their eigenvalues are exact.

use nalgebra::{DMatrix, DVector};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Dimension of the space of symmetric n×n matrices.
pub fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// (P + Pᵀ)/2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of P − Pᵀ.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Scaled upper-triangle vectorization of a symmetric matrix.
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut v = DVector::zeros(sym_dim(n));
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            v[k] = if i == j { m[(i, j)] } else { SQRT2 * m[(i, j)] };
            k += 1;
        }
    }
    v
}

/// Inverse of [`svec`].
pub fn unsvec(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, j)] = v[k];
            } else {
                let x = v[k] / SQRT2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

/// Stack the `svec`s of a per-regime family into one vector.
pub fn svec_family(fam: &[DMatrix<f64>]) -> DVector<f64> {
    let n = fam[0].nrows();
    let d = sym_dim(n);
    let mut v = DVector::zeros(d * fam.len());
    for (r, m) in fam.iter().enumerate() {
        v.rows_mut(r * d, d).copy_from(&svec(m));
    }
    v
}

/// Inverse of [`svec_family`].
pub fn unsvec_family(v: &DVector<f64>, n: usize, m0: usize) -> Vec<DMatrix<f64>> {
    let d = sym_dim(n);
    (0..m0)
        .map(|r| unsvec(&v.rows(r * d, d).into_owned(), n))
        .collect()
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    *sym_eigenvalues(m).last().unwrap()
}

/// Spectral norm σ_max(m) of a general rectangular matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    max_eigenvalue(&gram).max(0.0).sqrt()
}

/// Invert a symmetric matrix through its eigendecomposition.
///
/// Errors when the smallest absolute eigenvalue is below `tol`.
pub fn sym_inverse(m: &DMatrix<f64>, tol: f64) -> Option<(DMatrix<f64>, f64)> {
    let eig = symmetrize(m).symmetric_eigen();
    let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &l| a.min(l.abs()));
    if min_abs < tol {
        return None;
    }
    let inv_vals = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| 1.0 / l));
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    Some((symmetrize(&inv), min_abs))
}

/// Clamp eigenvalues in (−tol, 0) to zero; leaves larger violations alone.
pub fn project_near_psd(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0 || l <= -tol) {
        return symmetrize(m);
    }
    let vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| if l < 0.0 && l > -tol { 0.0 } else { l }),
    );
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

/// Build the matrix of a linear operator on per-regime symmetric families
/// by applying it to every `svec` basis vector.
pub fn family_operator_matrix<F>(n: usize, m0: usize, mut op: F) -> DMatrix<f64>
where
    F: FnMut(&[DMatrix<f64>]) -> Vec<DMatrix<f64>>,
{
    let dim = m0 * sym_dim(n);
    let mut out = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let mut e = DVector::zeros(dim);
        e[k] = 1.0;
        let fam = unsvec_family(&e, n, m0);
        let col = svec_family(&op(&fam));
        out.column_mut(k).copy_from(&col);
    }
    out
}

/// Largest real part of the eigenvalues of a general square matrix.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Block-diagonal of two square matrices.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(na + nb, na + nb);
    out.view_mut((0, 0), (na, na)).copy_from(a);
    out.view_mut((na, na), (nb, nb)).copy_from(b);
    out
}
