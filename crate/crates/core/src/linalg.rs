//! Small dense-matrix helpers shared by the estimator and the Riccati analysis.
//!
//! Everything here works on symmetric matrices of a few dozen rows at most, so
//! eigendecompositions are recomputed freely rather than cached.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance used when accepting a matrix as positive semidefinite.
pub const PSD_REL_TOL: f64 = 1e-10;

/// `(M + M') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 {
        return DVector::zeros(0);
    }
    let mut vals = symmetrize(m).symmetric_eigenvalues();
    vals.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    vals
}

/// Smallest eigenvalue of the symmetric part of `m` (`+inf` for an empty matrix).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// PSD test with `λ_min ≥ −1e-10·(1 + λ_max)`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    let vals = sym_eigenvalues(m);
    if vals.is_empty() {
        return true;
    }
    let lo = vals[0];
    let hi = vals[vals.len() - 1];
    lo >= -PSD_REL_TOL * (1.0 + hi.max(0.0))
}

/// `true` when `a ⪯ b + slack·I`.
pub fn psd_leq(a: &DMatrix<f64>, b: &DMatrix<f64>, slack: f64) -> bool {
    min_eigenvalue(&(b - a)) >= -slack
}

/// Clip tiny negative eigenvalues produced by round-off.
///
/// Only eigenvalues in `(-floor, 0)` are raised to zero; the matrix is
/// returned untouched when it is already PSD so exact arithmetic paths are
/// not perturbed by a reconstruction.
pub fn psd_floor(m: &mut DMatrix<f64>, floor: f64) {
    if m.nrows() == 0 || m.clone().cholesky().is_some() {
        return;
    }
    let eig = symmetrize(m).symmetric_eigen();
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if lo >= 0.0 || lo <= -floor {
        return;
    }
    let clipped = eig.eigenvalues.map(|v| if v < 0.0 && v > -floor { 0.0 } else { v });
    let v = &eig.eigenvectors;
    *m = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    symmetrize_in_place(m);
}

/// Unique symmetric PSD square root, eigenvalues below zero are clipped.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let eig = symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&roots) * v.transpose()))
}

/// Inverse symmetric square root of a positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::NotPositiveDefinite {
            what,
            eigenvalue: bad,
        });
    }
    let inv_roots = eig.eigenvalues.map(|v| 1.0 / libm::sqrt(v));
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&inv_roots) * v.transpose())))
}

/// A factor `F` with `F F' = m`, used to draw correlated Gaussian noise.
///
/// Cholesky is used when it succeeds; otherwise the factor comes from the
/// eigendecomposition with negative eigenvalues clipped at zero.
pub fn gaussian_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let sym = symmetrize(m);
    if let Some(chol) = sym.clone().cholesky() {
        return chol.unpack();
    }
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Numerical rank with threshold `max(rows, cols)·ε·σ_max`.
///
/// Also returns the smallest singular value above the threshold divided by the
/// threshold, which callers use to flag near-degenerate rank decisions.
pub fn numerical_rank(m: &DMatrix<f64>) -> (usize, f64) {
    if m.is_empty() {
        return (0, f64::INFINITY);
    }
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return (0, f64::INFINITY);
    }
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax;
    let mut rank = 0;
    let mut closest = f64::INFINITY;
    for &s in sv.iter() {
        if s > tol {
            rank += 1;
            closest = closest.min(s / tol);
        }
    }
    (rank, closest)
}

/// Spectral radius `max |σ_i(A)|` over the (complex) eigenvalues.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    match a.nrows() {
        0 => 0.0,
        1 => a[(0, 0)].abs(),
        _ => a
            .complex_eigenvalues()
            .iter()
            .map(|z| libm::hypot(z.re, z.im))
            .fold(0.0_f64, f64::max),
    }
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    m.trace()
}

/// Checks a matrix shape, naming the offending field on failure.
pub fn check_shape(m: &DMatrix<f64>, what: &'static str, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            what,
            expected_rows: rows,
            expected_cols: cols,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Whether the off-diagonal entries vanish (exactly, or relative to `tol`).
pub fn is_diagonal(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = m.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)].abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_only_touches_tiny_negatives() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-13]);
        psd_floor(&mut m, 1e-10);
        assert!(min_eigenvalue(&m) >= 0.0);
        let mut big = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        let before = big.clone();
        psd_floor(&mut big, 1e-10);
        assert_eq!(big, before);
    }

    #[test]
    fn sqrt_roundtrip() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = sym_sqrt(&m);
        assert!(max_abs(&(&r * &r - &m)) < 1e-12);
        let ir = sym_inv_sqrt(&m, "m").unwrap();
        assert!(max_abs(&(&ir * &m * &ir - DMatrix::identity(2, 2))) < 1e-12);
    }

    #[test]
    fn factor_of_singular_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = gaussian_factor(&m);
        assert!(max_abs(&(&f * f.transpose() - &m)) < 1e-12);
    }

    #[test]
    fn radius_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        assert!((spectral_radius(&a) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_of_repeated_rows() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(numerical_rank(&m).0, 1);
        assert_eq!(numerical_rank(&DMatrix::zeros(2, 2)).0, 0);
    }
}
