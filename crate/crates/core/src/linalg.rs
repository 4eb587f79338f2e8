//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative band used for symmetry and semidefiniteness checks.
pub const PSD_TOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = max_abs(m).max(1.0);
    max_abs(&(m - m.transpose())) <= rel_tol * scale
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Positive semidefinite to the band `-PSD_TOL * max(1, |M|)`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= -PSD_TOL * max_abs(m).max(1.0)
}

/// Strictly positive definite with margin `rel_tol * max(1, |M|)`.
pub fn is_pd(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    min_eigenvalue(m) > rel_tol * max_abs(m).max(1.0)
}

/// Operator 2-norm (largest singular value). Falls back to power iteration
/// on `MᵀM` when the SVD does not converge.
pub fn op_norm2(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if let Some(svd) = m.clone().try_svd(false, false, 1e-14, 10_000) {
        return svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
    }
    power_norm2(m, 1e-10, 10_000)
}

pub(crate) fn power_norm2(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let gram = m.transpose() * m;
    let n = gram.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = &gram * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw;
        v = w / nw;
        if (next - lambda).abs() <= tol * next.max(1.0) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.sqrt()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |a, z| a.max(z.norm()))
}

pub fn mat_pow(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..k {
        out = &out * m;
    }
    out
}

/// Symmetric square root `V diag(sqrt(max(λ, 0))) Vᵀ`, so that
/// `|L x|² = xᵀ M x` for PSD `M`.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Inverse of a symmetric positive definite matrix, `None` when the
/// Cholesky factorization fails.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    symmetrize(m).cholesky().map(|c| c.inverse())
}

/// Numerical rank from singular values above `rel_tol * σ_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(0.0_f64, |a, &s| a.max(s));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Quadratic form `xᵀ M x`.
pub fn quad(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_norm_matches_rank_one_closed_form() {
        let u = DVector::from_vec(vec![0.4, 0.5, -0.6]);
        let v = DVector::from_vec(vec![0.7, 0.5, -0.7]);
        let m = &u * v.transpose();
        let expected = u.norm() * v.norm();
        assert!((op_norm2(&m) - expected).abs() < 1e-12);
        assert!((power_norm2(&m, 1e-14, 1000) - expected).abs() < 1e-9);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let l = psd_sqrt(&m);
        assert!(max_abs(&(&l * &l - &m)) < 1e-12);
    }

    #[test]
    fn nilpotent_has_zero_radius() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(spectral_radius(&m) < 1e-12);
        assert_eq!(rank(&m, 1e-12), 1);
    }
}
