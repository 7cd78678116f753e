//! Direct dense solvers: Cholesky for symmetric positive definite systems and
//! partial-pivot LU for general square systems.

use super::Matrix;
use crate::error::{Result, RomError};

/// Relative pivot threshold below which LU elimination reports the matrix as
/// singular.
const LU_PIVOT_REL_TOL: f64 = 1e-13;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
///
/// Only the lower triangle of `a` is read, so roundoff-level asymmetry from
/// upstream matrix products is harmless. Fails with the offending pivot index
/// when the matrix is not positive definite.
pub fn cholesky_factor(a: &Matrix) -> Result<Matrix> {
    if a.rows() != a.cols() {
        return Err(RomError::Shape(format!(
            "cholesky: matrix is {}x{}, need square",
            a.rows(),
            a.cols()
        )));
    }
    a.ensure_finite("cholesky")?;
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(RomError::NotPositiveDefinite { context: "cholesky".into(), pivot: j });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solve `A X = B` for symmetric positive definite `A` via Cholesky.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(RomError::Shape(format!(
            "solve_spd: A is {}x{} but B has {} rows",
            a.rows(),
            a.cols(),
            b.rows()
        )));
    }
    let l = cholesky_factor(a)?;
    let n = a.rows();
    let mut x = b.clone();
    for col in 0..x.cols() {
        let xc = x.col_mut(col);
        // Forward: L y = b.
        for i in 0..n {
            let mut s = xc[i];
            for k in 0..i {
                s -= l[(i, k)] * xc[k];
            }
            xc[i] = s / l[(i, i)];
        }
        // Backward: Lᵀ x = y.
        for i in (0..n).rev() {
            let mut s = xc[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * xc[k];
            }
            xc[i] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Packed LU factorization with row pivoting, reusable across right-hand
/// sides.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: Matrix,
    perm: Vec<usize>,
}

impl LuFactors {
    pub fn factor(a: &Matrix) -> Result<LuFactors> {
        if a.rows() != a.cols() {
            return Err(RomError::Shape(format!(
                "lu: matrix is {}x{}, need square",
                a.rows(),
                a.cols()
            )));
        }
        a.ensure_finite("lu")?;
        let n = a.rows();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut best = k;
            let mut best_mag = lu[(k, k)].abs();
            for i in (k + 1)..n {
                if lu[(i, k)].abs() > best_mag {
                    best = i;
                    best_mag = lu[(i, k)].abs();
                }
            }
            if best != k {
                perm.swap(k, best);
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(best, j)];
                    lu[(best, j)] = t;
                }
            }
            let pivot = lu[(k, k)];
            if pivot.abs() <= LU_PIVOT_REL_TOL * scale {
                return Err(RomError::Singular { context: "lu".into(), pivot: k });
            }
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                for j in (k + 1)..n {
                    let lkj = lu[(k, j)];
                    lu[(i, j)] -= f * lkj;
                }
            }
        }
        Ok(LuFactors { lu, perm })
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        assert_eq!(b.len(), n, "lu solve: rhs length mismatch");
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for k in 0..n {
            for i in (k + 1)..n {
                x[i] -= self.lu[(i, k)] * x[k];
            }
        }
        for k in (0..n).rev() {
            for j in (k + 1)..n {
                x[k] -= self.lu[(k, j)] * x[j];
            }
            x[k] /= self.lu[(k, k)];
        }
        x
    }

    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        if b.rows() != self.perm.len() {
            return Err(RomError::Shape(format!(
                "lu solve: B has {} rows, factorization is {}x{}",
                b.rows(),
                self.perm.len(),
                self.perm.len()
            )));
        }
        let mut x = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let xj = self.solve_vec(b.col(j));
            x.col_mut(j).copy_from_slice(&xj);
        }
        Ok(x)
    }
}

/// Solve `A X = B` for a general square `A` with partial-pivot LU.
pub fn solve_general(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(RomError::Shape(format!(
            "solve_general: A is {}x{} but B has {} rows",
            a.rows(),
            a.cols(),
            b.rows()
        )));
    }
    LuFactors::factor(a)?.solve(b)
}
