//! Singular value decomposition built from Householder QR and one-sided
//! Jacobi orthogonalization.
//!
//! The Jacobi route costs more sweeps than bidiagonalization but resolves
//! small singular values with high relative accuracy, which matters whenever
//! the inverse of the singular-value diagonal feeds a downstream operator.
//! Tall inputs are first reduced by a thin QR factorization so the sweep cost
//! depends on the column count only. No randomization is involved anywhere:
//! the same input always yields the same factors.

use super::{dot, Matrix};
use crate::error::{Result, RomError};

/// Truncated factorization `A ≈ U diag(sigma) Vᵀ`.
///
/// `u` is `rows × r` with orthonormal columns, `v` is `cols × r` with
/// orthonormal columns, and `sigma` holds the `r` retained singular values in
/// nonincreasing order.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    /// Number of retained singular values.
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Reconstruct `U diag(sigma) Vᵀ`; used by callers to measure truncation
    /// error and by tests as the multiply-back oracle.
    pub fn reconstruct(&self) -> Matrix {
        let r = self.rank();
        let mut scaled = self.u.clone();
        for k in 0..r {
            let col = scaled.col_mut(k);
            for x in col.iter_mut() {
                *x *= self.sigma[k];
            }
        }
        scaled.matmul(&self.v.transpose())
    }
}

/// Relative cutoff applied when the caller does not supply one: singular
/// values at or below `1e-12 * sigma_max` are discarded.
pub const DEFAULT_REL_TOL: f64 = 1e-12;

const JACOBI_PAIR_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 60;

/// Compute a truncated SVD of `a`.
///
/// `max_rank` caps the number of retained triplets; `rel_tol` overrides the
/// default relative cutoff (pass `Some(0.0)` to keep every nonzero singular
/// value). Returns an error for matrices with non-finite entries, for the
/// all-zero matrix (which has no usable left factor), and if the Jacobi
/// sweeps fail to converge.
pub fn svd(a: &Matrix, max_rank: Option<usize>, rel_tol: Option<f64>) -> Result<SvdResult> {
    a.ensure_finite("svd")?;
    if a.rows() < a.cols() {
        // Work on the transpose and swap the factors back.
        let t = svd(&a.transpose(), max_rank, rel_tol)?;
        return Ok(SvdResult { u: t.v, sigma: t.sigma, v: t.u });
    }

    let tol = rel_tol.unwrap_or(DEFAULT_REL_TOL);
    if tol < 0.0 || !tol.is_finite() {
        return Err(RomError::Invalid(format!("svd: relative tolerance {tol} must be finite and >= 0")));
    }

    // Strictly tall inputs go through a thin QR so the Jacobi sweeps run on a
    // square matrix whose side is the column count.
    let (q, r) = if a.rows() > a.cols() { householder_qr(a) } else { (None, a.clone()) };

    let (w_u, sigma_all, v_all) = one_sided_jacobi(r)?;

    let sigma_max = sigma_all[0];
    if sigma_max == 0.0 {
        return Err(RomError::Invalid("svd: input matrix is identically zero".into()));
    }

    let cap = max_rank.unwrap_or(usize::MAX).min(sigma_all.len());
    let mut rank = 0;
    while rank < cap && sigma_all[rank] > tol * sigma_max {
        rank += 1;
    }
    if rank == 0 {
        // A rank cap of zero or a tolerance >= 1 can get here even though the
        // matrix itself is fine.
        return Err(RomError::Invalid(format!(
            "svd: truncation kept no singular values (max_rank {max_rank:?}, rel_tol {tol})"
        )));
    }

    let u_small = w_u.submatrix_cols(0, rank);
    let u = match q {
        Some(q) => q.matmul(&u_small),
        None => u_small,
    };
    Ok(SvdResult { u, sigma: sigma_all[..rank].to_vec(), v: v_all.submatrix_cols(0, rank) })
}

/// Thin Householder QR of a strictly tall matrix: returns (Q, R) with Q of
/// shape `rows × cols` (orthonormal columns) and R upper triangular
/// `cols × cols`.
fn householder_qr(a: &Matrix) -> (Option<Matrix>, Matrix) {
    let m = a.rows();
    let n = a.cols();
    let mut work = a.clone();
    // Reflector k is stored as the pair (beta, v) acting on rows k..m.
    let mut reflectors: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n);

    for k in 0..n {
        let mut normx_sq = 0.0;
        for i in k..m {
            normx_sq += work[(i, k)] * work[(i, k)];
        }
        let normx = normx_sq.sqrt();
        if normx == 0.0 {
            reflectors.push((0.0, Vec::new()));
            continue;
        }
        let x0 = work[(k, k)];
        let alpha = if x0 >= 0.0 { -normx } else { normx };
        let mut v: Vec<f64> = (k..m).map(|i| work[(i, k)]).collect();
        v[0] -= alpha;
        let beta = 2.0 / dot(&v, &v);
        for j in k..n {
            let mut s = 0.0;
            for (off, vi) in v.iter().enumerate() {
                s += vi * work[(k + off, j)];
            }
            s *= beta;
            for (off, vi) in v.iter().enumerate() {
                work[(k + off, j)] -= s * vi;
            }
        }
        reflectors.push((beta, v));
    }

    let mut r = Matrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            r[(i, j)] = work[(i, j)];
        }
    }

    // Back-accumulate the thin Q by applying the reflectors, last first, to
    // the leading columns of the identity.
    let mut q = Matrix::zeros(m, n);
    for j in 0..n {
        q[(j, j)] = 1.0;
    }
    for k in (0..n).rev() {
        let (beta, ref v) = reflectors[k];
        if beta == 0.0 {
            continue;
        }
        for j in 0..n {
            let mut s = 0.0;
            for (off, vi) in v.iter().enumerate() {
                s += vi * q[(k + off, j)];
            }
            s *= beta;
            for (off, vi) in v.iter().enumerate() {
                q[(k + off, j)] -= s * vi;
            }
        }
    }
    (Some(q), r)
}

/// One-sided Jacobi: rotate column pairs of `w` until all pairs are mutually
/// orthogonal, accumulating the rotations into V. Returns the normalized left
/// factor, the column norms (sorted nonincreasing), and V with matching
/// column order.
fn one_sided_jacobi(mut w: Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let n = w.cols();
    let mut v = Matrix::identity(n);

    // Columns whose norm has collapsed to the roundoff floor carry no usable
    // direction; rotating against them chases noise and never converges.
    let max_norm_sq =
        (0..n).map(|j| dot(w.col(j), w.col(j))).fold(0.0f64, f64::max);
    let floor_sq = f64::EPSILON * f64::EPSILON * max_norm_sq;

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let app = dot(w.col(p), w.col(p));
                let aqq = dot(w.col(q), w.col(q));
                let apq = dot(w.col(p), w.col(q));
                if app <= floor_sq || aqq <= floor_sq {
                    continue;
                }
                if apq == 0.0 || apq.abs() <= JACOBI_PAIR_TOL * (app * aqq).sqrt() {
                    continue;
                }
                let zeta = (aqq - app) / (2.0 * apq);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut w, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
                rotated = true;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(RomError::Convergence(format!(
            "svd: Jacobi sweeps did not orthogonalize {n} columns within {MAX_SWEEPS} passes"
        )));
    }

    let mut norms: Vec<f64> = (0..n).map(|j| dot(w.col(j), w.col(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u = Matrix::zeros(w.rows(), n);
    let mut v_sorted = Matrix::zeros(n, n);
    let mut sigma = vec![0.0; n];
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        let inv = if norms[src] > 0.0 { 1.0 / norms[src] } else { 0.0 };
        let wcol = w.col(src).to_vec();
        for (i, &x) in wcol.iter().enumerate() {
            u[(i, dst)] = x * inv;
        }
        let vcol = v.col(src).to_vec();
        for (i, &x) in vcol.iter().enumerate() {
            v_sorted[(i, dst)] = x;
        }
    }
    norms.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok((u, sigma, v_sorted))
}

/// Apply the plane rotation `[c, s; -s, c]` to columns `p`, `q` from the
/// right: col_p <- c*col_p - s*col_q, col_q <- s*col_p + c*col_q.
fn rotate_columns(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.rows() {
        let xp = m[(i, p)];
        let xq = m[(i, q)];
        m[(i, p)] = c * xp - s * xq;
        m[(i, q)] = s * xp + c * xq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_near(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} differ by more than {tol}");
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn assert_orthonormal_columns(m: &Matrix, tol: f64) {
        let g = m.transpose().matmul(m);
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_near(g[(i, j)], expect, tol);
            }
        }
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let r = svd(&Matrix::identity(4), None, None).unwrap();
        assert_eq!(r.rank(), 4);
        for s in &r.sigma {
            assert_near(*s, 1.0, 1e-14);
        }
    }

    #[test]
    fn diagonal_values_come_out_sorted() {
        let a = Matrix::diag(&[3.0, 1.0, 2.0]);
        let r = svd(&a, None, None).unwrap();
        assert_eq!(r.sigma.len(), 3);
        assert_near(r.sigma[0], 3.0, 1e-14);
        assert_near(r.sigma[1], 2.0, 1e-14);
        assert_near(r.sigma[2], 1.0, 1e-14);
    }

    #[test]
    fn rank_one_outer_product_truncates_to_one() {
        let u = [1.0, 2.0, 2.0]; // norm 3
        let v = [3.0, 4.0]; // norm 5
        let a = Matrix::from_fn(3, 2, |i, j| u[i] * v[j]);
        let r = svd(&a, None, None).unwrap();
        assert_eq!(r.rank(), 1);
        assert_near(r.sigma[0], 15.0, 1e-12);
    }

    #[test]
    fn multiply_back_recovers_square_matrix() {
        let a = random_matrix(7, 7, 11);
        let r = svd(&a, None, Some(0.0)).unwrap();
        let back = r.reconstruct();
        let err = back.sub(&a).frobenius_norm() / a.frobenius_norm();
        assert!(err <= 1e-12, "reconstruction error {err}");
        assert_orthonormal_columns(&r.u, 1e-12);
        assert_orthonormal_columns(&r.v, 1e-12);
    }

    #[test]
    fn multiply_back_recovers_tall_matrix() {
        let a = random_matrix(40, 5, 13);
        let r = svd(&a, None, Some(0.0)).unwrap();
        let err = r.reconstruct().sub(&a).frobenius_norm() / a.frobenius_norm();
        assert!(err <= 1e-12, "reconstruction error {err}");
        assert_orthonormal_columns(&r.u, 1e-12);
        assert_orthonormal_columns(&r.v, 1e-12);
    }

    #[test]
    fn multiply_back_recovers_wide_matrix() {
        let a = random_matrix(5, 40, 17);
        let r = svd(&a, None, Some(0.0)).unwrap();
        let err = r.reconstruct().sub(&a).frobenius_norm() / a.frobenius_norm();
        assert!(err <= 1e-12, "reconstruction error {err}");
        assert_orthonormal_columns(&r.u, 1e-12);
        assert_orthonormal_columns(&r.v, 1e-12);
    }

    #[test]
    fn rank_cap_truncates_and_keeps_leading_values() {
        let a = random_matrix(6, 6, 19);
        let full = svd(&a, None, Some(0.0)).unwrap();
        let capped = svd(&a, Some(3), Some(0.0)).unwrap();
        assert_eq!(capped.rank(), 3);
        for k in 0..3 {
            assert_near(capped.sigma[k], full.sigma[k], 1e-13 * full.sigma[0]);
        }
    }

    #[test]
    fn default_tolerance_drops_noise_level_values() {
        let a = Matrix::diag(&[1.0, 1e-8, 1e-15]);
        let r = svd(&a, None, None).unwrap();
        assert_eq!(r.rank(), 2);
        assert_near(r.sigma[1], 1e-8, 1e-20);
    }

    #[test]
    fn tiny_singular_values_keep_relative_accuracy() {
        // A left rotation of a graded diagonal keeps the exact singular
        // values; the Jacobi sweeps must recover even the 1e-14 one to high
        // relative accuracy.
        let d = [1.0, 1e-7, 1e-14];
        let mut a = Matrix::diag(&d);
        let (c1, s1) = (0.8f64, 0.6f64);
        for j in 0..3 {
            let x0 = a[(0, j)];
            let x1 = a[(1, j)];
            a[(0, j)] = c1 * x0 - s1 * x1;
            a[(1, j)] = s1 * x0 + c1 * x1;
        }
        let (c2, s2) = (0.6f64, -0.8f64);
        for j in 0..3 {
            let x1 = a[(1, j)];
            let x2 = a[(2, j)];
            a[(1, j)] = c2 * x1 - s2 * x2;
            a[(2, j)] = s2 * x1 + c2 * x2;
        }
        let r = svd(&a, None, Some(0.0)).unwrap();
        assert_eq!(r.rank(), 3);
        for (got, want) in r.sigma.iter().zip([1.0, 1e-7, 1e-14]) {
            let rel = (got - want).abs() / want;
            assert!(rel <= 1e-12, "singular value {want}: relative error {rel}");
        }
    }

    #[test]
    fn zero_matrix_is_rejected() {
        let a = Matrix::zeros(3, 3);
        assert!(matches!(svd(&a, None, None), Err(RomError::Invalid(_))));
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let a = random_matrix(12, 6, 23);
        let r1 = svd(&a, None, None).unwrap();
        let r2 = svd(&a, None, None).unwrap();
        assert_eq!(r1.sigma, r2.sigma);
        assert_eq!(r1.u, r2.u);
        assert_eq!(r1.v, r2.v);
    }
}
