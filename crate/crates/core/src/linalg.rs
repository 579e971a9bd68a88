//! Small dense linear-algebra helpers built on `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Dense real matrix used throughout the crate.
pub type Mat = DMatrix<f64>;
/// Dense real column vector used throughout the crate.
pub type Vector = DVector<f64>;

/// Cholesky factorisation of a symmetric positive definite matrix.
pub fn cholesky(m: &Mat, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &Mat, what: &str) -> Result<Mat> {
    let mut inv = cholesky(m, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Solves `S X = B` for symmetric positive definite `S`.
pub fn spd_solve(s: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    Ok(cholesky(s, what)?.solve(b))
}

/// Solves `M X = B` for a general square `M` using LU with partial pivoting.
pub fn lu_solve(m: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    m.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::SingularGram(what.to_string()))
}

/// Replaces `p` by `(p + pᵀ)/2`.
pub fn symmetrize(p: &mut Mat) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

/// Block-diagonal matrix with the given blocks.
pub fn blkdiag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Horizontal concatenation `[a b]`.
pub fn hstack(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

/// Vertical concatenation `[a; b]`.
pub fn vstack(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.ncols(), b.ncols());
    let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

/// Concatenation of two vectors.
pub fn vcat(a: &Vector, b: &Vector) -> Vector {
    let mut out = Vector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Diagonal matrix built from a vector.
pub fn diag(v: &Vector) -> Mat {
    Mat::from_diagonal(v)
}

/// Largest absolute entry, used as a cheap matrix scale.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// True when every entry is finite.
pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(p: &Mat) -> f64 {
    let mut s = p.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v))
}

/// True when `p` is symmetric and positive semidefinite up to `rel_tol·‖p‖`.
pub fn is_psd(p: &Mat, rel_tol: f64) -> bool {
    let scale = p.norm().max(f64::MIN_POSITIVE);
    let asym = (p - p.transpose()).norm();
    asym <= rel_tol * scale && min_eigenvalue(p) >= -rel_tol * scale
}

/// Ratio of the smallest to the largest singular value.
pub fn singular_value_ratio(m: &Mat) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().fold(0.0_f64, |a, v| a.max(*v));
    let min = sv.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Log-determinant of a symmetric positive definite matrix.
pub fn spd_logdet(m: &Mat, what: &str) -> Result<f64> {
    let l = cholesky(m, what)?;
    Ok(2.0 * l.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}
