//! Intrusive reduced-basis models for affine-parametric symmetric coercive
//! systems.
//!
//! A full-order problem enters as an affine decomposition
//! `A(mu) = sum_i theta_L^i(mu) A_i`, `F(mu) = sum_i theta_f^i(mu) F_i`
//! with sparse symmetric terms. Offline, the terms are projected once onto
//! an orthonormal basis `Z` (built by POD over training solves or by a
//! greedy loop steered by the residual indicator); online, each query
//! solves only the dense `N_rb x N_rb` system, so its cost is independent
//! of the full-order dof count.

use crate::dataset::{ParameterSpace, SnapshotMeta, SnapshotSet};
use crate::error::{Result, RomError};
use crate::numerics::{dot, norm2, solve_spd, Matrix};
use crate::reduction::{pod_fit, PodCriterion, ReducedBasis};
use crate::sparse::{cg_solve, CsrMatrix};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

/// Largest permitted deviation of `Z^T Z` from the identity when a basis is
/// accepted for projection.
const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Norm ratio below which a greedy snapshot is declared linearly dependent
/// on the current basis.
const STAGNATION_TOL: f64 = 1e-10;

/// Scalar coefficient attached to one affine term.
///
/// The named variants carry a stable text tag (see [`Theta::tag`]) so
/// operators built from them can be persisted and reloaded; `Custom`
/// closures are programmatic-only.
#[derive(Clone)]
pub enum Theta {
    /// Constant 1, independent of the parameter.
    One,
    /// The d-th parameter component itself.
    Component(usize),
    /// `constant + sum_d weights[d] * mu[d]`.
    Affine { constant: f64, weights: Vec<f64> },
    /// Arbitrary user function; cannot be persisted.
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl Theta {
    pub fn eval(&self, mu: &[f64]) -> Result<f64> {
        let value = match self {
            Theta::One => 1.0,
            Theta::Component(d) => {
                if *d >= mu.len() {
                    return Err(RomError::Shape(format!(
                        "coefficient reads parameter component {d} but mu has {} entries",
                        mu.len()
                    )));
                }
                mu[*d]
            }
            Theta::Affine { constant, weights } => {
                if weights.len() > mu.len() {
                    return Err(RomError::Shape(format!(
                        "affine coefficient has {} weights but mu has {} entries",
                        weights.len(),
                        mu.len()
                    )));
                }
                constant + dot(weights, &mu[..weights.len()])
            }
            Theta::Custom(f) => f(mu),
        };
        if !value.is_finite() {
            return Err(RomError::NonFinite(format!(
                "coefficient evaluated to {value} at mu={mu:?}"
            )));
        }
        Ok(value)
    }

    /// Stable text identifier for persistence; `None` for `Custom`.
    pub fn tag(&self) -> Option<String> {
        match self {
            Theta::One => Some("one".into()),
            Theta::Component(d) => Some(format!("component:{d}")),
            Theta::Affine { constant, weights } => {
                let list: Vec<String> = weights.iter().map(|w| format!("{w}")).collect();
                Some(format!("affine:{constant};{}", list.join(",")))
            }
            Theta::Custom(_) => None,
        }
    }

    /// Inverse of [`Theta::tag`].
    pub fn from_tag(tag: &str) -> Result<Theta> {
        if tag == "one" {
            return Ok(Theta::One);
        }
        if let Some(rest) = tag.strip_prefix("component:") {
            let d: usize = rest
                .parse()
                .map_err(|_| RomError::Format(format!("bad component coefficient tag '{tag}'")))?;
            return Ok(Theta::Component(d));
        }
        if let Some(rest) = tag.strip_prefix("affine:") {
            let (head, list) = rest
                .split_once(';')
                .ok_or_else(|| RomError::Format(format!("bad affine coefficient tag '{tag}'")))?;
            let constant: f64 = head
                .parse()
                .map_err(|_| RomError::Format(format!("bad affine coefficient tag '{tag}'")))?;
            let mut weights = Vec::new();
            if !list.is_empty() {
                for piece in list.split(',') {
                    let w: f64 = piece.parse().map_err(|_| {
                        RomError::Format(format!("bad affine coefficient tag '{tag}'"))
                    })?;
                    weights.push(w);
                }
            }
            return Ok(Theta::Affine { constant, weights });
        }
        Err(RomError::Format(format!("unknown coefficient tag '{tag}'")))
    }
}

impl fmt::Debug for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta::One => write!(f, "Theta::One"),
            Theta::Component(d) => write!(f, "Theta::Component({d})"),
            Theta::Affine { constant, weights } => {
                write!(f, "Theta::Affine {{ constant: {constant}, weights: {weights:?} }}")
            }
            Theta::Custom(_) => write!(f, "Theta::Custom(..)"),
        }
    }
}

/// Lower bound on the coercivity constant of the assembled operator, used
/// to scale residual norms into error indicators.
#[derive(Clone)]
pub enum CoercivityBound {
    /// `alpha_LB(mu) = unit_constant * min_i theta_L^i(mu)`.
    ///
    /// Valid when every operator term is positive semidefinite and all
    /// operator coefficients stay positive over the parameter space;
    /// `unit_constant` is a lower bound on the smallest eigenvalue of
    /// `sum_i A_i` (the operator with every coefficient at 1).
    MinTheta { unit_constant: f64 },
    /// Arbitrary user bound; cannot be persisted.
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for CoercivityBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoercivityBound::MinTheta { unit_constant } => {
                write!(f, "CoercivityBound::MinTheta {{ unit_constant: {unit_constant} }}")
            }
            CoercivityBound::Custom(_) => write!(f, "CoercivityBound::Custom(..)"),
        }
    }
}

fn eval_alpha_lb(
    bound: &CoercivityBound,
    operator_thetas: &[f64],
    mu: &[f64],
) -> Result<f64> {
    let alpha = match bound {
        CoercivityBound::MinTheta { unit_constant } => {
            let min_theta =
                operator_thetas.iter().fold(f64::INFINITY, |acc, &t| acc.min(t));
            unit_constant * min_theta
        }
        CoercivityBound::Custom(f) => f(mu),
    };
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(RomError::Invalid(format!(
            "coercivity lower bound is {alpha} at mu={mu:?}; it must be positive"
        )));
    }
    Ok(alpha)
}

/// Full-order problem in affine-parametric form.
#[derive(Debug, Clone)]
pub struct AffineProblem {
    /// `(theta_L^i, A_i)`: symmetric operator terms, all N x N.
    pub operator_terms: Vec<(Theta, CsrMatrix)>,
    /// `(theta_f^i, F_i)`: right-hand-side terms, all length N.
    pub rhs_terms: Vec<(Theta, Vec<f64>)>,
    /// Coercivity lower bound used by the error indicator.
    pub coercivity: CoercivityBound,
    /// Admissible parameter domain.
    pub space: ParameterSpace,
}

impl AffineProblem {
    pub fn new(
        operator_terms: Vec<(Theta, CsrMatrix)>,
        rhs_terms: Vec<(Theta, Vec<f64>)>,
        coercivity: CoercivityBound,
        space: ParameterSpace,
    ) -> Result<AffineProblem> {
        let n = match operator_terms.first() {
            Some((_, a)) => a.rows(),
            None => {
                return Err(RomError::Invalid(
                    "affine problem needs at least one operator term".into(),
                ))
            }
        };
        if rhs_terms.is_empty() {
            return Err(RomError::Invalid(
                "affine problem needs at least one right-hand-side term".into(),
            ));
        }
        for (i, (_, a)) in operator_terms.iter().enumerate() {
            if a.rows() != n || a.cols() != n {
                return Err(RomError::Shape(format!(
                    "operator term {i} is {}x{}, expected {n}x{n}",
                    a.rows(),
                    a.cols()
                )));
            }
        }
        for (i, (_, f)) in rhs_terms.iter().enumerate() {
            if f.len() != n {
                return Err(RomError::Shape(format!(
                    "rhs term {i} has length {}, expected {n}",
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(RomError::NonFinite(format!("rhs term {i} has non-finite entries")));
            }
        }
        Ok(AffineProblem { operator_terms, rhs_terms, coercivity, space })
    }

    pub fn dof(&self) -> usize {
        self.operator_terms[0].1.rows()
    }

    fn operator_thetas(&self, mu: &[f64]) -> Result<Vec<f64>> {
        self.operator_terms.iter().map(|(t, _)| t.eval(mu)).collect()
    }

    /// `sum_i theta_L^i(mu) A_i` as one sparse matrix.
    pub fn assemble(&self, mu: &[f64]) -> Result<CsrMatrix> {
        let thetas = self.operator_thetas(mu)?;
        let terms: Vec<(f64, &CsrMatrix)> =
            thetas.iter().copied().zip(self.operator_terms.iter().map(|(_, a)| a)).collect();
        CsrMatrix::linear_combination(&terms)
    }

    /// `sum_i theta_f^i(mu) F_i`.
    pub fn assemble_rhs(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dof()];
        for (theta, f) in &self.rhs_terms {
            let w = theta.eval(mu)?;
            for (o, v) in out.iter_mut().zip(f) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    pub fn alpha_lb(&self, mu: &[f64]) -> Result<f64> {
        eval_alpha_lb(&self.coercivity, &self.operator_thetas(mu)?, mu)
    }

    /// Full-order solve by conjugate gradients (relative residual 1e-10).
    pub fn solve(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let a = self.assemble(mu)?;
        let f = self.assemble_rhs(mu)?;
        let budget = 200 + 10 * self.dof();
        let (u, _) = cg_solve(&a, &f, None, 1e-10, budget)?;
        Ok(u)
    }

    /// Spot-check the structural assumptions: every operator term is
    /// symmetric, the assembled operator is positive definite at each of
    /// the given parameter points (witnessed by a conjugate-gradient probe,
    /// which breaks down on negative curvature), and the coefficient
    /// functions look continuous under small parameter perturbations.
    pub fn validate(&self, samples: &[Vec<f64>]) -> Result<()> {
        for (i, (_, a)) in self.operator_terms.iter().enumerate() {
            let scale = 1.0 + a.max_abs();
            if a.max_asymmetry() > 1e-12 * scale {
                return Err(RomError::Invalid(format!(
                    "operator term {i} is not symmetric (max |A - A^T| = {:.3e})",
                    a.max_asymmetry()
                )));
            }
        }
        for mu in samples {
            if !self.space.contains(mu) {
                return Err(RomError::Invalid(format!(
                    "validation point {mu:?} lies outside the parameter space"
                )));
            }
            self.alpha_lb(mu)?;
            let a = self.assemble(mu)?;
            // Deterministic pseudo-random probe vector with energy in every
            // coordinate, so an indefinite direction cannot hide from CG.
            let n = self.dof();
            let b: Vec<f64> =
                (0..n).map(|i| 1.0 + 0.5 * ((i as f64 * 12.9898).sin())).collect();
            match cg_solve(&a, &b, None, 1e-8, 50 + 3 * n) {
                Ok(_) => {}
                Err(RomError::Convergence(_)) => {} // slow, but no indefiniteness witnessed
                Err(e) => return Err(e),
            }
            self.check_theta_smoothness(mu)?;
        }
        Ok(())
    }

    fn check_theta_smoothness(&self, mu: &[f64]) -> Result<()> {
        let all: Vec<&Theta> = self
            .operator_terms
            .iter()
            .map(|(t, _)| t)
            .chain(self.rhs_terms.iter().map(|(t, _)| t))
            .collect();
        for d in 0..self.space.dim() {
            let h = 1e-6 * (self.space.upper[d] - self.space.lower[d]);
            let mut shifted = mu.to_vec();
            shifted[d] = (mu[d] + h).min(self.space.upper[d]);
            if shifted[d] == mu[d] {
                shifted[d] = mu[d] - h;
            }
            for theta in &all {
                let here = theta.eval(mu)?;
                let there = theta.eval(&shifted)?;
                if (there - here).abs() > 1e-3 * (1.0 + here.abs()) {
                    return Err(RomError::Invalid(format!(
                        "coefficient jumps from {here} to {there} over a {h:.1e} step \
                         in parameter {d} near mu={mu:?}; coefficients must be continuous"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Offline product of projecting an [`AffineProblem`] onto a basis.
///
/// Carries everything the online stage needs: the reduced terms for the
/// dense solve, and precomputed residual inner products so the error
/// indicator runs without touching any length-N vector.
#[derive(Debug, Clone)]
pub struct ReducedOperator {
    /// N x N_rb, orthonormal columns.
    pub basis: Matrix,
    /// `(theta_L^i, Z^T A_i Z)`, each N_rb x N_rb.
    pub operator_terms: Vec<(Theta, Matrix)>,
    /// `(theta_f^i, Z^T F_i)`, each length N_rb.
    pub rhs_terms: Vec<(Theta, Vec<f64>)>,
    /// Coercivity bound inherited from the source problem.
    pub coercivity: CoercivityBound,
    /// `gram_ff[(i, j)] = F_i . F_j`.
    gram_ff: Matrix,
    /// `gram_fa[i][j] = (A_j Z)^T F_i`, length N_rb.
    gram_fa: Vec<Vec<Vec<f64>>>,
    /// `gram_aa[i][j] = (A_i Z)^T (A_j Z)`, N_rb x N_rb.
    gram_aa: Vec<Vec<Matrix>>,
}

impl ReducedOperator {
    pub fn n_rb(&self) -> usize {
        self.basis.cols()
    }

    pub fn dof(&self) -> usize {
        self.basis.rows()
    }

    /// Expand reduced coefficients back to the full-order space: `Z alpha`.
    pub fn lift(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        if alpha.len() != self.n_rb() {
            return Err(RomError::Shape(format!(
                "coefficient vector has length {}, basis has {} columns",
                alpha.len(),
                self.n_rb()
            )));
        }
        Ok(self.basis.matvec(alpha))
    }

    /// `sum_i theta_L^i(mu) (Z^T A_i Z)` (dense, N_rb x N_rb).
    pub fn reduced_matrix(&self, mu: &[f64]) -> Result<Matrix> {
        let k = self.n_rb();
        let mut out = Matrix::zeros(k, k);
        for (theta, a) in &self.operator_terms {
            let w = theta.eval(mu)?;
            for (o, v) in out.as_mut_slice().iter_mut().zip(a.as_slice()) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    /// `sum_i theta_f^i(mu) (Z^T F_i)`.
    pub fn reduced_rhs(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_rb()];
        for (theta, f) in &self.rhs_terms {
            let w = theta.eval(mu)?;
            for (o, v) in out.iter_mut().zip(f) {
                *o += w * v;
            }
        }
        Ok(out)
    }
}

fn sparse_times_dense(a: &CsrMatrix, z: &Matrix) -> Result<Matrix> {
    let mut cols = Vec::with_capacity(z.cols());
    for j in 0..z.cols() {
        cols.push(a.matvec(z.col(j))?);
    }
    Ok(Matrix::from_columns(&cols))
}

/// Project every affine term of `problem` onto the orthonormal basis `z`
/// and precompute the residual inner products. Done once per basis; every
/// later online query works on the reduced quantities only.
pub fn assemble_reduced(problem: &AffineProblem, z: &Matrix) -> Result<ReducedOperator> {
    let n = problem.dof();
    if z.rows() != n {
        return Err(RomError::Shape(format!(
            "basis has {} rows but the problem has {n} unknowns",
            z.rows()
        )));
    }
    if z.cols() == 0 {
        return Err(RomError::Invalid("basis must have at least one column".into()));
    }
    let gram = z.transpose().matmul(z);
    let mut drift: f64 = 0.0;
    for i in 0..gram.rows() {
        for j in 0..gram.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            drift = drift.max((gram[(i, j)] - target).abs());
        }
    }
    if drift > ORTHONORMALITY_TOL {
        return Err(RomError::Invalid(format!(
            "basis columns are not orthonormal (max deviation {drift:.3e})"
        )));
    }

    let zt = z.transpose();
    let mut az_all = Vec::with_capacity(problem.operator_terms.len());
    let mut operator_terms = Vec::with_capacity(problem.operator_terms.len());
    for (theta, a) in &problem.operator_terms {
        let az = sparse_times_dense(a, z)?;
        operator_terms.push((theta.clone(), zt.matmul(&az)));
        az_all.push(az);
    }
    let mut rhs_terms = Vec::with_capacity(problem.rhs_terms.len());
    for (theta, f) in &problem.rhs_terms {
        rhs_terms.push((theta.clone(), z.transpose_matvec(f)));
    }

    let m_f = problem.rhs_terms.len();
    let m_a = problem.operator_terms.len();
    let mut gram_ff = Matrix::zeros(m_f, m_f);
    for i in 0..m_f {
        for j in 0..m_f {
            gram_ff[(i, j)] = dot(&problem.rhs_terms[i].1, &problem.rhs_terms[j].1);
        }
    }
    let mut gram_fa = Vec::with_capacity(m_f);
    for i in 0..m_f {
        let mut row = Vec::with_capacity(m_a);
        for az in &az_all {
            row.push(az.transpose_matvec(&problem.rhs_terms[i].1));
        }
        gram_fa.push(row);
    }
    let mut gram_aa = Vec::with_capacity(m_a);
    for i in 0..m_a {
        let mut row = Vec::with_capacity(m_a);
        for j in 0..m_a {
            row.push(az_all[i].transpose().matmul(&az_all[j]));
        }
        gram_aa.push(row);
    }

    Ok(ReducedOperator {
        basis: z.clone(),
        operator_terms,
        rhs_terms,
        coercivity: problem.coercivity.clone(),
        gram_ff,
        gram_fa,
        gram_aa,
    })
}

/// Online solve: assemble the dense reduced system at `mu` and factor it.
/// The result are the basis coefficients; `op.lift` expands them.
pub fn solve_reduced(op: &ReducedOperator, mu: &[f64]) -> Result<Vec<f64>> {
    let ahat = op.reduced_matrix(mu)?;
    let fhat = op.reduced_rhs(mu)?;
    let alpha = solve_spd(&ahat, &Matrix::column(&fhat)).map_err(|e| match e {
        RomError::NotPositiveDefinite { pivot, .. } => RomError::NotPositiveDefinite {
            context: format!(
                "reduced operator at mu={mu:?} (coercivity violation)"
            ),
            pivot,
        },
        other => other,
    })?;
    Ok(alpha.as_slice().to_vec())
}

/// Residual-based error indicator
/// `Delta(mu) = ||F(mu) - A(mu) Z alpha||_2 / alpha_LB(mu)`,
/// evaluated entirely from precomputed affine inner products.
pub fn error_indicator(op: &ReducedOperator, mu: &[f64], alpha: &[f64]) -> Result<f64> {
    if alpha.len() != op.n_rb() {
        return Err(RomError::Shape(format!(
            "coefficient vector has length {}, basis has {} columns",
            alpha.len(),
            op.n_rb()
        )));
    }
    let theta_f: Vec<f64> =
        op.rhs_terms.iter().map(|(t, _)| t.eval(mu)).collect::<Result<_>>()?;
    let theta_l: Vec<f64> =
        op.operator_terms.iter().map(|(t, _)| t.eval(mu)).collect::<Result<_>>()?;

    let mut r2 = 0.0;
    for (i, ti) in theta_f.iter().enumerate() {
        for (j, tj) in theta_f.iter().enumerate() {
            r2 += ti * tj * op.gram_ff[(i, j)];
        }
    }
    for (i, tf) in theta_f.iter().enumerate() {
        for (j, tl) in theta_l.iter().enumerate() {
            r2 -= 2.0 * tf * tl * dot(&op.gram_fa[i][j], alpha);
        }
    }
    for (i, ti) in theta_l.iter().enumerate() {
        for (j, tj) in theta_l.iter().enumerate() {
            let m = &op.gram_aa[i][j];
            // alpha^T M alpha
            let mut q = 0.0;
            for c in 0..m.cols() {
                q += alpha[c] * dot(m.col(c), alpha);
            }
            r2 += ti * tj * q;
        }
    }
    // The three groups cancel almost exactly for a good basis; floating-point
    // noise can leave a tiny negative remainder.
    let residual = r2.max(0.0).sqrt();
    let alpha_lb = eval_alpha_lb(&op.coercivity, &theta_l, mu)?;
    Ok(residual / alpha_lb)
}

/// One greedy selection: which training point was picked and the indicator
/// value that picked it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyStep {
    /// Index into the training set.
    pub selected: usize,
    /// Max indicator over the training set at selection time.
    pub indicator: f64,
}

/// Why the greedy loop stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GreedyStop {
    /// Max indicator over the training set fell to the tolerance.
    Tolerance,
    /// The basis reached the requested cap.
    BasisCap,
    /// The selected snapshot was linearly dependent on the basis (norm
    /// ratio after orthogonalization at or below 1e-10); the basis cannot
    /// grow further on this training set.
    Stagnation { norm_ratio: f64 },
}

#[derive(Debug, Clone)]
pub struct GreedyResult {
    pub operator: ReducedOperator,
    /// One entry per snapshot selection, in order.
    pub history: Vec<GreedyStep>,
    pub stop: GreedyStop,
    /// Max indicator over the training set for the returned basis (for a
    /// stagnation stop: the indicator at the stagnating selection).
    pub final_indicator: f64,
}

fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    (best, values[best])
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Returns the
/// normalized remainder and the ratio `||remainder|| / ||v||`.
fn mgs_append(columns: &[Vec<f64>], v: &[f64]) -> (Vec<f64>, f64) {
    let before = norm2(v);
    if before == 0.0 {
        return (v.to_vec(), 0.0);
    }
    let mut w = v.to_vec();
    for _ in 0..2 {
        for q in columns {
            let c = dot(q, &w);
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= c * qi;
            }
        }
    }
    let after = norm2(&w);
    let ratio = after / before;
    if after > 0.0 {
        for wi in &mut w {
            *wi /= after;
        }
    }
    (w, ratio)
}

/// Build a basis by weak greedy selection: repeatedly solve the full-order
/// problem at the training point with the largest error indicator, append
/// the orthonormalized solution, and re-project. Stops when the max
/// indicator reaches `tolerance`, the basis reaches `max_n_rb` columns, or
/// a selected snapshot adds nothing new (stagnation).
pub fn greedy_build(
    problem: &AffineProblem,
    training: &[Vec<f64>],
    tolerance: f64,
    max_n_rb: usize,
) -> Result<GreedyResult> {
    if training.is_empty() {
        return Err(RomError::Invalid("greedy construction needs a nonempty training set".into()));
    }
    if max_n_rb == 0 {
        return Err(RomError::Invalid("basis cap must be at least 1".into()));
    }

    // Indicator for the empty basis: ||F(mu)|| / alpha_LB(mu).
    let mut field = Vec::with_capacity(training.len());
    for mu in training {
        let f = problem.assemble_rhs(mu)?;
        field.push(norm2(&f) / problem.alpha_lb(mu)?);
    }

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut history = Vec::new();
    loop {
        let (selected, indicator) = argmax(&field);
        history.push(GreedyStep { selected, indicator });

        let u = problem.solve(&training[selected])?;
        let (w, ratio) = mgs_append(&columns, &u);
        if ratio <= STAGNATION_TOL {
            if columns.is_empty() {
                return Err(RomError::Invalid(
                    "first greedy snapshot is numerically zero; the problem has no content".into(),
                ));
            }
            let operator = assemble_reduced(problem, &Matrix::from_columns(&columns))?;
            return Ok(GreedyResult {
                operator,
                history,
                stop: GreedyStop::Stagnation { norm_ratio: ratio },
                final_indicator: indicator,
            });
        }
        columns.push(w);

        let operator = assemble_reduced(problem, &Matrix::from_columns(&columns))?;
        for (slot, mu) in field.iter_mut().zip(training) {
            let alpha = solve_reduced(&operator, mu)?;
            *slot = error_indicator(&operator, mu, &alpha)?;
        }
        let (_, max_indicator) = argmax(&field);
        if max_indicator <= tolerance {
            return Ok(GreedyResult {
                operator,
                history,
                stop: GreedyStop::Tolerance,
                final_indicator: max_indicator,
            });
        }
        if columns.len() >= max_n_rb {
            return Ok(GreedyResult {
                operator,
                history,
                stop: GreedyStop::BasisCap,
                final_indicator: max_indicator,
            });
        }
    }
}

#[derive(Debug, Clone)]
pub struct PodBuild {
    pub operator: ReducedOperator,
    /// Modes and singular values retained by the criterion.
    pub basis: ReducedBasis,
    /// The training solves the basis was fitted to.
    pub snapshots: SnapshotSet,
}

/// Build a basis by solving the full-order problem at every training point
/// and fitting an orthogonal mode basis to the solutions.
pub fn pod_build(
    problem: &AffineProblem,
    training: &[Vec<f64>],
    criterion: PodCriterion,
) -> Result<PodBuild> {
    if training.is_empty() {
        return Err(RomError::Invalid("basis construction needs a nonempty training set".into()));
    }
    let mut cols = Vec::with_capacity(training.len());
    for mu in training {
        cols.push(problem.solve(mu)?);
    }
    let set = SnapshotSet::new(
        Matrix::from_columns(&cols),
        training.to_vec(),
        (0..training.len()).map(|i| i as f64).collect(),
        SnapshotMeta { field: "state".into(), provenance: "affine-fom".into() },
    )?;
    let basis = pod_fit(&set, criterion)?;
    let operator = assemble_reduced(problem, &basis.modes)?;
    Ok(PodBuild { operator, basis, snapshots: set })
}

// --- persistence ------------------------------------------------------------

const MAGIC: &[u8; 4] = b"ROMG";
const VERSION: u32 = 1;

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_tag(buf: &mut Vec<u8>, theta: &Theta) -> Result<()> {
    let tag = theta.tag().ok_or_else(|| {
        RomError::Invalid(
            "custom coefficient functions cannot be persisted; \
             rebuild them programmatically after loading"
                .into(),
        )
    })?;
    buf.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    Ok(())
}

/// Persist a reduced operator: basis, reduced terms, coefficient tags, the
/// coercivity constant, and the indicator inner products. Only named
/// coefficient functions round-trip; `Theta::Custom` and
/// `CoercivityBound::Custom` are rejected.
pub fn save_reduced(op: &ReducedOperator, path: &Path) -> Result<()> {
    let n = op.dof();
    let k = op.n_rb();
    let m_a = op.operator_terms.len();
    let m_f = op.rhs_terms.len();

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(k as u64).to_le_bytes());
    buf.extend_from_slice(&(m_a as u64).to_le_bytes());
    buf.extend_from_slice(&(m_f as u64).to_le_bytes());
    match &op.coercivity {
        CoercivityBound::MinTheta { unit_constant } => {
            buf.push(0u8);
            buf.extend_from_slice(&unit_constant.to_le_bytes());
        }
        CoercivityBound::Custom(_) => {
            return Err(RomError::Invalid(
                "custom coercivity bounds cannot be persisted; \
                 rebuild them programmatically after loading"
                    .into(),
            ))
        }
    }
    push_f64s(&mut buf, op.basis.as_slice());
    for (theta, a) in &op.operator_terms {
        push_tag(&mut buf, theta)?;
        push_f64s(&mut buf, a.as_slice());
    }
    for (theta, f) in &op.rhs_terms {
        push_tag(&mut buf, theta)?;
        push_f64s(&mut buf, f);
    }
    push_f64s(&mut buf, op.gram_ff.as_slice());
    for row in &op.gram_fa {
        for v in row {
            push_f64s(&mut buf, v);
        }
    }
    for row in &op.gram_aa {
        for m in row {
            push_f64s(&mut buf, m.as_slice());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest[..8]);
    std::fs::write(path, &buf).map_err(|e| RomError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.bytes.len() {
            return None;
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Option<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8)?)?;
        Some(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn tag(&mut self) -> Option<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).ok()
    }
}

pub fn load_reduced(path: &Path) -> Result<ReducedOperator> {
    let bytes = std::fs::read(path).map_err(|e| RomError::io(path, e))?;
    let bad = |what: &str| RomError::Format(format!("{}: {what}", path.display()));
    if bytes.len() < 8 + MAGIC.len() + 4 {
        return Err(bad("file too short"));
    }
    let (payload, stored) = bytes.split_at(bytes.len() - 8);
    let digest = Sha256::digest(payload);
    if stored != &digest[..8] {
        return Err(bad("checksum mismatch; the file is corrupt"));
    }
    let mut c = Cursor { bytes: payload, pos: 0 };
    if c.take(4) != Some(MAGIC.as_slice()) {
        return Err(bad("bad magic; not a reduced-operator file"));
    }
    match c.u32() {
        Some(VERSION) => {}
        Some(v) => return Err(bad(&format!("unsupported version {v}"))),
        None => return Err(bad("truncated header")),
    }
    let trunc = || bad("truncated payload");
    let n = c.u64().ok_or_else(trunc)? as usize;
    let k = c.u64().ok_or_else(trunc)? as usize;
    let m_a = c.u64().ok_or_else(trunc)? as usize;
    let m_f = c.u64().ok_or_else(trunc)? as usize;
    if k == 0 || m_a == 0 || m_f == 0 || n < k {
        return Err(bad("inconsistent dimensions"));
    }
    let coercivity = match c.u8().ok_or_else(trunc)? {
        0 => CoercivityBound::MinTheta { unit_constant: c.f64().ok_or_else(trunc)? },
        t => return Err(bad(&format!("unknown coercivity kind {t}"))),
    };
    let basis_data = c.f64s(n * k).ok_or_else(trunc)?;
    let basis = Matrix::from_columns(
        &basis_data.chunks_exact(n).map(|ch| ch.to_vec()).collect::<Vec<_>>(),
    );
    let mut operator_terms = Vec::with_capacity(m_a);
    for _ in 0..m_a {
        let tag = c.tag().ok_or_else(trunc)?;
        let theta = Theta::from_tag(&tag)?;
        let data = c.f64s(k * k).ok_or_else(trunc)?;
        let a = Matrix::from_columns(&data.chunks_exact(k).map(|ch| ch.to_vec()).collect::<Vec<_>>());
        operator_terms.push((theta, a));
    }
    let mut rhs_terms = Vec::with_capacity(m_f);
    for _ in 0..m_f {
        let tag = c.tag().ok_or_else(trunc)?;
        let theta = Theta::from_tag(&tag)?;
        rhs_terms.push((theta, c.f64s(k).ok_or_else(trunc)?));
    }
    let ff_data = c.f64s(m_f * m_f).ok_or_else(trunc)?;
    let gram_ff = Matrix::from_columns(
        &ff_data.chunks_exact(m_f).map(|ch| ch.to_vec()).collect::<Vec<_>>(),
    );
    let mut gram_fa = Vec::with_capacity(m_f);
    for _ in 0..m_f {
        let mut row = Vec::with_capacity(m_a);
        for _ in 0..m_a {
            row.push(c.f64s(k).ok_or_else(trunc)?);
        }
        gram_fa.push(row);
    }
    let mut gram_aa = Vec::with_capacity(m_a);
    for _ in 0..m_a {
        let mut row = Vec::with_capacity(m_a);
        for _ in 0..m_a {
            let data = c.f64s(k * k).ok_or_else(trunc)?;
            row.push(Matrix::from_columns(
                &data.chunks_exact(k).map(|ch| ch.to_vec()).collect::<Vec<_>>(),
            ));
        }
        gram_aa.push(row);
    }
    if c.pos != payload.len() {
        return Err(bad("trailing bytes after payload"));
    }
    if !basis.is_finite() {
        return Err(bad("basis has non-finite entries"));
    }
    Ok(ReducedOperator {
        basis,
        operator_terms,
        rhs_terms,
        coercivity,
        gram_ff,
        gram_fa,
        gram_aa,
    })
}
