//! Compressed sparse row matrices and a Jacobi-preconditioned conjugate
//! gradient solver for the symmetric positive definite systems the
//! full-order solvers assemble.

use crate::error::{Result, RomError};
use crate::numerics::Matrix;

/// Triplet accumulator for building a [`CsrMatrix`]. Duplicate entries are
/// summed, matching how finite-difference and finite-element assembly add
/// per-face or per-element contributions.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(rows: usize, cols: usize) -> TripletBuilder {
        TripletBuilder { rows, cols, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        self.entries.push((row, col, value));
    }

    pub fn build(self) -> Result<CsrMatrix> {
        let mut entries = self.entries;
        for &(r, c, v) in &entries {
            if r >= self.rows || c >= self.cols {
                return Err(RomError::Shape(format!(
                    "triplet ({r}, {c}) outside a {}x{} matrix",
                    self.rows, self.cols
                )));
            }
            if !v.is_finite() {
                return Err(RomError::NonFinite(format!("triplet value at ({r}, {c})")));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut cursor = 0;
        for row in 0..self.rows {
            while cursor < entries.len() && entries[cursor].0 == row {
                let col = entries[cursor].1;
                let mut sum = 0.0;
                while cursor < entries.len() && entries[cursor].0 == row && entries[cursor].1 == col
                {
                    sum += entries[cursor].2;
                    cursor += 1;
                }
                col_idx.push(col);
                values.push(sum);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix { rows: self.rows, cols: self.cols, row_ptr, col_idx, values })
    }
}

/// Sparse matrix in compressed sparse row layout with sorted, unique
/// column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Stored entry count.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entry accessor (zero for positions outside the sparsity pattern).
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        match self.col_idx[lo..hi].binary_search(&col) {
            Ok(off) => self.values[lo + off],
            Err(_) => 0.0,
        }
    }

    /// y = A·x.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(RomError::Shape(format!(
                "matvec: vector length {} does not match {} columns",
                x.len(),
                self.cols
            )));
        }
        let mut y = vec![0.0; self.rows];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for row in 0..self.rows {
            let mut sum = 0.0;
            for idx in self.row_ptr[row]..self.row_ptr[row + 1] {
                sum += self.values[idx] * x[self.col_idx[idx]];
            }
            y[row] = sum;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    /// Largest |A_ij| over the stored pattern (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Largest |A_ij − A_ji| over the whole pattern.
    pub fn max_asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for row in 0..self.rows {
            for idx in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.col_idx[idx];
                worst = worst.max((self.values[idx] - self.get(col, row)).abs());
            }
        }
        worst
    }

    /// Dense copy (for small-system oracles and reduced projections).
    pub fn to_dense(&self) -> Matrix {
        let mut dense = Matrix::zeros(self.rows, self.cols);
        for row in 0..self.rows {
            for idx in self.row_ptr[row]..self.row_ptr[row + 1] {
                dense[(row, self.col_idx[idx])] = self.values[idx];
            }
        }
        dense
    }

    /// Σ coeff_i · M_i over matrices sharing one shape.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<CsrMatrix> {
        let (rows, cols) = match terms.first() {
            Some((_, m)) => (m.rows, m.cols),
            None => return Err(RomError::Invalid("linear combination of no matrices".into())),
        };
        let mut builder = TripletBuilder::new(rows, cols);
        for &(coeff, m) in terms {
            if m.rows != rows || m.cols != cols {
                return Err(RomError::Shape(format!(
                    "linear combination mixes {}x{} and {rows}x{cols} matrices",
                    m.rows, m.cols
                )));
            }
            for row in 0..m.rows {
                for idx in m.row_ptr[row]..m.row_ptr[row + 1] {
                    builder.push(row, m.col_idx[idx], coeff * m.values[idx]);
                }
            }
        }
        builder.build()
    }
}

/// Outcome of a conjugate gradient solve.
#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    /// Final relative residual ‖b − Ax‖₂ / ‖b‖₂.
    pub relative_residual: f64,
}

/// Conjugate gradients with Jacobi (diagonal) preconditioning for
/// symmetric positive definite systems. Converges when the relative
/// residual drops to `tol`; a non-positive search curvature reports the
/// operator as not positive definite, and hitting `max_iter` reports
/// non-convergence with the iteration count and the residual reached.
pub fn cg_solve(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgReport)> {
    if a.rows() != a.cols() {
        return Err(RomError::Shape(format!("cg needs a square matrix, got {}x{}", a.rows, a.cols)));
    }
    let n = a.rows();
    if b.len() != n {
        return Err(RomError::Shape(format!("cg: rhs length {} vs {n} unknowns", b.len())));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(RomError::Invalid(format!("cg tolerance must be positive, got {tol}")));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(RomError::NonFinite("cg right-hand side".into()));
    }
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        let x = match x0 {
            Some(_) | None => vec![0.0; n],
        };
        return Ok((x, CgReport { iterations: 0, relative_residual: 0.0 }));
    }
    let inv_diag: Vec<f64> = {
        let diag = a.diagonal();
        let mut inv = Vec::with_capacity(n);
        for (i, &d) in diag.iter().enumerate() {
            if d <= 0.0 {
                return Err(RomError::NotPositiveDefinite {
                    context: "cg jacobi preconditioner".into(),
                    pivot: i,
                });
            }
            inv.push(1.0 / d);
        }
        inv
    };
    let mut x = match x0 {
        Some(start) => {
            if start.len() != n {
                return Err(RomError::Shape(format!(
                    "cg: initial guess length {} vs {n} unknowns",
                    start.len()
                )));
            }
            start.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r = b.to_vec();
    if x0.is_some() {
        let ax = a.matvec(&x)?;
        for i in 0..n {
            r[i] -= ax[i];
        }
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rho: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut q = vec![0.0; n];
    for iter in 0..max_iter {
        let res_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if res_norm <= tol * b_norm {
            return Ok((x, CgReport { iterations: iter, relative_residual: res_norm / b_norm }));
        }
        a.matvec_into(&p, &mut q);
        let curvature: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        if curvature <= 0.0 {
            return Err(RomError::NotPositiveDefinite {
                context: format!("cg search direction at iteration {iter}"),
                pivot: iter,
            });
        }
        let alpha = rho / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rho_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rho_next / rho;
        rho = rho_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if res_norm <= tol * b_norm {
        return Ok((x, CgReport { iterations: max_iter, relative_residual: res_norm / b_norm }));
    }
    Err(RomError::Convergence(format!(
        "cg stalled at relative residual {:.3e} after {max_iter} iterations (target {tol:.1e})",
        res_norm / b_norm
    )))
}

/// Estimate the smallest eigenvalue of a symmetric positive definite
/// matrix by inverse power iteration (each step one CG solve). The
/// Rayleigh quotient converges from above, so the result is shrunk by the
/// observed last relative update to stay a usable lower-bound estimate.
pub fn min_eigenvalue_estimate(a: &CsrMatrix, iterations: usize) -> Result<f64> {
    if a.rows() != a.cols() || a.rows() == 0 {
        return Err(RomError::Shape(format!(
            "eigenvalue estimate needs a nonempty square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows();
    // Deterministic non-degenerate start vector.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i % 7) as f64) / 7.0).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    let mut rayleigh = f64::INFINITY;
    let mut previous = f64::INFINITY;
    for _ in 0..iterations.max(1) {
        let (w, _) = cg_solve(a, &v, None, 1e-12, 40 * n)?;
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(RomError::Convergence("inverse power iteration collapsed".into()));
        }
        for (slot, wi) in v.iter_mut().zip(&w) {
            *slot = wi / norm;
        }
        let av = a.matvec(&v)?;
        previous = rayleigh;
        rayleigh = v.iter().zip(&av).map(|(a, b)| a * b).sum();
    }
    let drift = if previous.is_finite() {
        ((previous - rayleigh) / rayleigh).abs().min(0.5)
    } else {
        0.5
    };
    Ok(rayleigh * (1.0 - drift).max(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::solve_spd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CsrMatrix {
        let mut builder = TripletBuilder::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if rng.gen::<f64>() < 0.3 {
                    builder.push(r, c, rng.gen_range(-2.0..2.0));
                }
            }
        }
        builder.build().unwrap()
    }

    /// Flux-form 5-point diffusion operator on an n×n Dirichlet grid with
    /// unit spacing: each face carries the mean of its two cell
    /// coefficients (the cell's own at wall faces), which keeps the matrix
    /// symmetric for heterogeneous fields.
    fn laplacian_2d(n: usize, coeff: impl Fn(usize, usize) -> f64) -> CsrMatrix {
        let at = |i: usize, j: usize| j * n + i;
        let mut builder = TripletBuilder::new(n * n, n * n);
        let isize_n = n as isize;
        for j in 0..n {
            for i in 0..n {
                let c = coeff(i, j);
                for (di, dj) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let ni = i as isize + di;
                    let nj = j as isize + dj;
                    if ni >= 0 && ni < isize_n && nj >= 0 && nj < isize_n {
                        let face = 0.5 * (c + coeff(ni as usize, nj as usize));
                        builder.push(at(i, j), at(i, j), face);
                        builder.push(at(i, j), at(ni as usize, nj as usize), -face);
                    } else {
                        builder.push(at(i, j), at(i, j), c);
                    }
                }
            }
        }
        builder.build().unwrap()
    }

    #[test]
    fn builder_merges_duplicates_and_sorts_columns() {
        let mut builder = TripletBuilder::new(2, 3);
        builder.push(1, 2, 1.0);
        builder.push(0, 1, 2.0);
        builder.push(1, 2, 0.5);
        builder.push(1, 0, -1.0);
        let m = builder.build().unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(0, 0), 0.0);

        let mut bad = TripletBuilder::new(2, 2);
        bad.push(2, 0, 1.0);
        assert!(matches!(bad.build(), Err(RomError::Shape(_))));
    }

    #[test]
    fn matvec_matches_dense_multiplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let rows = rng.gen_range(1..12);
            let cols = rng.gen_range(1..12);
            let m = random_sparse(&mut rng, rows, cols);
            let x: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sparse_y = m.matvec(&x).unwrap();
            let dense_y = m.to_dense().matvec(&x);
            for (a, b) in sparse_y.iter().zip(&dense_y) {
                assert!((a - b).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn linear_combination_matches_dense_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_sparse(&mut rng, 6, 6);
        let b = random_sparse(&mut rng, 6, 6);
        let combo = CsrMatrix::linear_combination(&[(2.0, &a), (-0.5, &b)]).unwrap();
        let dense = combo.to_dense();
        for r in 0..6 {
            for c in 0..6 {
                let want = 2.0 * a.get(r, c) - 0.5 * b.get(r, c);
                assert!((dense[(r, c)] - want).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn asymmetry_detector_sees_one_sided_entries() {
        let sym = laplacian_2d(4, |_, _| 1.0);
        assert_eq!(sym.max_asymmetry(), 0.0);
        let mut builder = TripletBuilder::new(3, 3);
        builder.push(0, 0, 1.0);
        builder.push(0, 1, 0.5);
        builder.push(1, 0, 0.5 - 1e-10);
        builder.push(2, 2, 1.0);
        let nearly = builder.build().unwrap();
        assert!((nearly.max_asymmetry() - 1e-10).abs() <= 1e-15);
    }

    #[test]
    fn cg_matches_dense_cholesky_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // SPD by construction: BᵀB + I on a random sparse B.
        let b = random_sparse(&mut rng, 8, 8);
        let dense_b = b.to_dense();
        let mut spd = dense_b.transpose().matmul(&dense_b);
        for i in 0..8 {
            spd[(i, i)] += 1.0;
        }
        let mut builder = TripletBuilder::new(8, 8);
        for r in 0..8 {
            for c in 0..8 {
                if spd[(r, c)] != 0.0 {
                    builder.push(r, c, spd[(r, c)]);
                }
            }
        }
        let sparse_spd = builder.build().unwrap();
        let rhs: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, report) = cg_solve(&sparse_spd, &rhs, None, 1e-12, 200).unwrap();
        let oracle = solve_spd(&spd, &Matrix::column(&rhs)).unwrap();
        for (a, b) in x.iter().zip(oracle.as_slice()) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
        assert!(report.relative_residual <= 1e-12);
    }

    #[test]
    fn cg_solves_a_heterogeneous_laplacian() {
        let n = 24;
        // Checkerboard contrast of 100 in the coefficient: the case where
        // the Jacobi preconditioner actually earns its keep.
        let a = laplacian_2d(n, |i, j| if (i / 8 + j / 8) % 2 == 0 { 1.0 } else { 100.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x_true: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = a.matvec(&x_true).unwrap();
        let (x, report) = cg_solve(&a, &b, None, 1e-10, 4000).unwrap();
        let err = x
            .iter()
            .zip(&x_true)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = x_true.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / scale <= 1e-7, "relative error {}", err / scale);
        assert!(report.iterations < n * n, "took {} iterations", report.iterations);
    }

    #[test]
    fn cg_warm_start_and_zero_rhs() {
        let a = laplacian_2d(6, |_, _| 1.0);
        let b = vec![0.0; 36];
        let (x, report) = cg_solve(&a, &b, None, 1e-10, 100).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
        assert_eq!(report.iterations, 0);

        let rhs: Vec<f64> = (0..36).map(|i| (i as f64 * 0.37).sin()).collect();
        let (cold, cold_report) = cg_solve(&a, &rhs, None, 1e-11, 500).unwrap();
        let (warm, warm_report) = cg_solve(&a, &rhs, Some(&cold), 1e-11, 500).unwrap();
        assert!(warm_report.iterations <= 1);
        for (a, b) in warm.iter().zip(&cold) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert!(cold_report.iterations > 1);
    }

    #[test]
    fn cg_reports_indefinite_operators() {
        let mut builder = TripletBuilder::new(2, 2);
        builder.push(0, 0, 1.0);
        builder.push(1, 1, -1.0);
        let a = builder.build().unwrap();
        let result = cg_solve(&a, &[1.0, 1.0], None, 1e-10, 50);
        assert!(matches!(result, Err(RomError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn cg_reports_iteration_budget_exhaustion() {
        let a = laplacian_2d(16, |_, _| 1.0);
        let b: Vec<f64> = (0..256).map(|i| ((i * 13 % 17) as f64) - 8.0).collect();
        match cg_solve(&a, &b, None, 1e-12, 3) {
            Err(RomError::Convergence(msg)) => {
                assert!(msg.contains("3 iterations"), "{msg}");
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn min_eigenvalue_estimate_brackets_the_dense_answer() {
        let n = 10;
        let a = laplacian_2d(n, |_, _| 1.0);
        // Unit-spacing 5-point Laplacian on an n×n Dirichlet grid has
        // smallest eigenvalue 8 sin²(π/(2(n+1))).
        let exact = 8.0 * (std::f64::consts::PI / (2.0 * (n as f64 + 1.0))).sin().powi(2);
        let estimate = min_eigenvalue_estimate(&a, 30).unwrap();
        assert!(estimate > 0.0);
        assert!(estimate <= exact * 1.001, "estimate {estimate} above exact {exact}");
        assert!(estimate >= exact * 0.4, "estimate {estimate} far below exact {exact}");
    }
}
