//! Small dense linear-algebra helpers shared by the regression, synthesis and solver code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Minimum-norm least-squares solution of `theta * x ≈ y` in the Frobenius norm.
///
/// `x` is `p × d` (one column per sample) and `y` is `q × d`; the result is `q × p`.
/// Singular values below `max(d, p) · σ_max · ε_mach` are treated as zero.
pub fn lstsq_right(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionError(format!(
            "regressor has {} samples, target has {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let xt = x.transpose();
    let yt = y.transpose();
    let svd = xt.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = (x.nrows().max(x.ncols()) as f64) * sigma_max * f64::EPSILON;
    let sol = svd
        .solve(&yt, tol)
        .map_err(|e| Error::FitFailed(e.to_string()))?;
    let theta = sol.transpose();
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitFailed("non-finite regression coefficients".into()));
    }
    Ok(theta)
}

/// Numerical rank of `x` with the same threshold as [`lstsq_right`].
pub fn numerical_rank(x: &DMatrix<f64>) -> usize {
    let sv = x.singular_values();
    let sigma_max = sv.max();
    let tol = (x.nrows().max(x.ncols()) as f64) * sigma_max * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    symmetrize(a).symmetric_eigenvalues().min()
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    symmetrize(a).symmetric_eigenvalues().max()
}

/// Symmetric (to a relative 1e-9) with strictly positive spectrum.
pub fn is_spd(a: &DMatrix<f64>) -> bool {
    if !a.is_square() || a.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = a.amax().max(1.0);
    if (a - a.transpose()).amax() > 1e-9 * scale {
        return false;
    }
    min_eigenvalue(a) > 0.0
}

/// Stabilizing solution of the discrete algebraic Riccati equation
/// `P = AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA + Q`, together with the gain
/// `K = (R + BᵀPB)⁻¹ BᵀPA` so that `u = −Kx`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
}

/// Solves the DARE with the structure-preserving doubling algorithm.
///
/// Converges quadratically when `(A, B)` is stabilizable and `(A, Q^{1/2})` is detectable;
/// otherwise the iteration stalls or blows up and `None` is returned.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Option<RiccatiSolution> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return None;
    }
    let r_inv = r.clone().try_inverse()?;
    let eye = DMatrix::<f64>::identity(n, n);

    let mut ak = a.clone();
    let mut gk = symmetrize(&(b * &r_inv * b.transpose()));
    let mut hk = symmetrize(q);

    const MAX_ITERS: usize = 100;
    for it in 1..=MAX_ITERS {
        let w = (&eye + &gk * &hk).try_inverse()?;
        let a_next = &ak * &w * &ak;
        let g_next = symmetrize(&(&gk + &ak * &w * &gk * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &w * &ak));
        if h_next.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let delta = (&h_next - &hk).amax();
        let scale = h_next.amax().max(1e-300);
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if delta <= 1e-14 * scale {
            let p = hk;
            let k = (r + b.transpose() * &p * b).try_inverse()? * b.transpose() * &p * a;
            let closed = a - b * &k;
            if closed.complex_eigenvalues().iter().any(|l| l.norm() >= 1.0) {
                return None;
            }
            return Some(RiccatiSolution {
                p,
                k,
                iterations: it,
            });
        }
    }
    None
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionError("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn is_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn riccati_iteration(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let mut p = q.clone();
        for _ in 0..200_000 {
            let g = (r + b.transpose() * &p * b).try_inverse().unwrap();
            let next = a.transpose() * &p * a - a.transpose() * &p * b * g * b.transpose() * &p * a + q;
            if (&next - &p).amax() < 1e-13 * next.amax() {
                return next;
            }
            p = next;
        }
        p
    }

    #[test]
    fn dare_matches_plain_iteration() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.2, 0.95]);
        let b = DMatrix::from_row_slice(2, 1, &[0.005, 0.1]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 0.1);
        let sol = solve_dare(&a, &b, &q, &r).unwrap();
        let oracle = riccati_iteration(&a, &b, &q, &r);
        assert_relative_eq!(sol.p, oracle, max_relative = 1e-8);
    }

    #[test]
    fn dare_zero_dynamics_is_q() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let sol = solve_dare(&a, &b, &q, &r).unwrap();
        assert_relative_eq!(sol.p, q, epsilon = 1e-14);
        assert!(sol.k.amax() < 1e-14);
    }

    #[test]
    fn dare_rejects_unstabilizable_pair() {
        let a = DMatrix::from_row_slice(2, 2, &[1.2, 0.0, 0.0, 0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        assert!(solve_dare(&a, &b, &q, &r).is_none());
    }

    #[test]
    fn lstsq_recovers_identity() {
        let x = DMatrix::from_fn(3, 50, |i, j| ((i * 7 + j * 13) % 11) as f64 - 5.0);
        let theta = lstsq_right(&x, &x).unwrap();
        assert_relative_eq!(theta, DMatrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn lstsq_rank_deficient_is_min_norm() {
        // duplicated regressor row: minimum-norm solution splits the weight evenly
        let base = DMatrix::from_fn(1, 20, |_, j| j as f64 - 9.5);
        let x = DMatrix::from_fn(2, 20, |_, j| base[(0, j)]);
        let y = &base * 2.0;
        let theta = lstsq_right(&x, &y).unwrap();
        assert_relative_eq!(theta[(0, 0)], 1.0, epsilon = 1e-10);
        assert_relative_eq!(theta[(0, 1)], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn spd_check() {
        assert!(is_spd(&DMatrix::identity(3, 3)));
        assert!(!is_spd(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])));
        assert!(!is_spd(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])));
    }
}
