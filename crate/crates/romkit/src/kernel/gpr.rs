//! Gaussian process regression with a squared-exponential kernel.
//!
//! The kernel is `k(x, x') = s2 * exp(-1/2 * sum_d ((x_d - x'_d)/ell_d)^2)`
//! with one length scale per input dimension. `sigma` is the noise standard
//! deviation, so `sigma^2` lands on the diagonal of the training kernel
//! matrix. Outputs are treated as independent processes sharing the same
//! kernel, which lets one Cholesky factorization serve every output column.

use crate::error::{Result, RomError};
use crate::numerics::{cholesky_factor, Matrix};

/// Squared-exponential hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GprHyper {
    /// Signal variance (amplitude squared).
    pub s2: f64,
    /// Per-dimension length scales.
    pub ell: Vec<f64>,
    /// Noise standard deviation.
    pub sigma: f64,
}

impl GprHyper {
    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.s2.is_finite() && self.s2 > 0.0) {
            return Err(RomError::Invalid(format!("gpr: s2 must be positive, got {}", self.s2)));
        }
        if self.ell.len() != dim {
            return Err(RomError::Shape(format!(
                "gpr: {} length scales for {dim}-dimensional inputs",
                self.ell.len()
            )));
        }
        if self.ell.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(RomError::Invalid("gpr: length scales must be positive".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(RomError::Invalid(format!(
                "gpr: sigma must be nonnegative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut q = 0.0;
        for d in 0..a.len() {
            let z = (a[d] - b[d]) / self.ell[d];
            q += z * z;
        }
        self.s2 * (-0.5 * q).exp()
    }
}

/// Prior mean function subtracted from the targets before fitting and added
/// back at prediction time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorMean {
    Zero,
    Constant(f64),
}

impl PriorMean {
    fn value(&self) -> f64 {
        match self {
            PriorMean::Zero => 0.0,
            PriorMean::Constant(c) => *c,
        }
    }
}

/// Fitted posterior state: the Cholesky factor of the noisy training kernel
/// and the weight columns `alpha = K_hat^{-1} (y - prior)`.
#[derive(Debug, Clone)]
pub struct GprModel {
    pub train_x: Vec<Vec<f64>>,
    pub hyper: GprHyper,
    pub prior: PriorMean,
    /// Lower Cholesky factor of `K + sigma^2 I + jitter I`.
    pub chol: Matrix,
    /// N x outputs solve of the centered targets.
    pub alpha: Matrix,
    /// Centered targets kept for the likelihood computation.
    pub y_centered: Matrix,
    /// Diagonal jitter that was actually needed (0 when the first Cholesky
    /// succeeded).
    pub jitter: f64,
}

impl GprModel {
    pub fn input_dim(&self) -> usize {
        self.train_x[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.alpha.cols()
    }

    pub fn len(&self) -> usize {
        self.train_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_x.is_empty()
    }
}

/// Relative jitter ladder tried when the noisy kernel matrix is not
/// numerically positive definite; each level scales the average diagonal.
const JITTER_LADDER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// Condition the process on `points -> values`. All value rows must share a
/// length (the output dimension).
pub fn gpr_fit(
    points: &[Vec<f64>],
    values: &[Vec<f64>],
    hyper: GprHyper,
    prior: PriorMean,
) -> Result<GprModel> {
    if points.is_empty() {
        return Err(RomError::Invalid("gpr_fit: need at least one point".into()));
    }
    if points.len() != values.len() {
        return Err(RomError::Shape(format!(
            "gpr_fit: {} points but {} value rows",
            points.len(),
            values.len()
        )));
    }
    let dim = points[0].len();
    let out_dim = values[0].len();
    if dim == 0 || out_dim == 0 {
        return Err(RomError::Invalid("gpr_fit: empty point or value vectors".into()));
    }
    if points.iter().any(|p| p.len() != dim) || values.iter().any(|v| v.len() != out_dim) {
        return Err(RomError::Shape("gpr_fit: ragged points or values".into()));
    }
    if points.iter().flatten().chain(values.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(RomError::NonFinite("gpr_fit: inputs contain NaN or infinity".into()));
    }
    hyper.validate(dim)?;

    let n = points.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = hyper.eval(&points[i], &points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += hyper.sigma * hyper.sigma;
    }
    let avg_diag = (0..n).map(|i| k[(i, i)]).sum::<f64>() / n as f64;

    let mut chol = None;
    let mut used_jitter = 0.0;
    for &level in &JITTER_LADDER {
        let jitter = level * avg_diag;
        let mut k_try = k.clone();
        for i in 0..n {
            k_try[(i, i)] += jitter;
        }
        if let Ok(l) = cholesky_factor(&k_try) {
            chol = Some(l);
            used_jitter = jitter;
            break;
        }
    }
    let chol = chol.ok_or_else(|| RomError::NotPositiveDefinite {
        context: format!(
            "gpr_fit: kernel matrix stayed indefinite up to jitter {:.3e}",
            JITTER_LADDER[JITTER_LADDER.len() - 1] * avg_diag
        ),
        pivot: n,
    })?;

    let g = prior.value();
    let mut y_centered = Matrix::zeros(n, out_dim);
    for (i, v) in values.iter().enumerate() {
        for (o, &y) in v.iter().enumerate() {
            y_centered[(i, o)] = y - g;
        }
    }

    let mut alpha = Matrix::zeros(n, out_dim);
    for o in 0..out_dim {
        let col = solve_with_factor(&chol, y_centered.col(o));
        alpha.col_mut(o).copy_from_slice(&col);
    }

    Ok(GprModel { train_x: points.to_vec(), hyper, prior, chol, alpha, y_centered, jitter: used_jitter })
}

/// Forward/backward substitution with a cached lower Cholesky factor:
/// solves `L Lᵀ x = b`.
fn solve_with_factor(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut z = b.to_vec();
    for i in 0..n {
        let mut s = z[i];
        for j in 0..i {
            s -= l[(i, j)] * z[j];
        }
        z[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * z[j];
        }
        z[i] = s / l[(i, i)];
    }
    z
}

/// Forward substitution only: solves `L v = b`.
fn forward_sub(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut v = b.to_vec();
    for i in 0..n {
        let mut s = v[i];
        for j in 0..i {
            s -= l[(i, j)] * v[j];
        }
        v[i] = s / l[(i, i)];
    }
    v
}

/// Posterior mean (queries x outputs) and covariance (queries x queries) at
/// the given query points. The covariance is shared across outputs because
/// they share the kernel; its diagonal is clamped at zero after symmetrizing,
/// and a diagonal entry below `-1e-10 * s2` is treated as a numerical failure.
pub fn gpr_predict(model: &GprModel, queries: &[Vec<f64>]) -> Result<(Matrix, Matrix)> {
    let dim = model.input_dim();
    if queries.iter().any(|q| q.len() != dim) {
        return Err(RomError::Shape(format!(
            "gpr_predict: queries must have dimension {dim}"
        )));
    }
    if queries.iter().flatten().any(|v| !v.is_finite()) {
        return Err(RomError::NonFinite("gpr_predict: queries contain NaN or infinity".into()));
    }
    let nq = queries.len();
    let n = model.len();
    let out_dim = model.output_dim();
    if nq == 0 {
        return Ok((Matrix::zeros(0, out_dim), Matrix::zeros(0, 0)));
    }

    // Cross kernel, training x queries.
    let mut kxq = Matrix::zeros(n, nq);
    for q in 0..nq {
        for i in 0..n {
            kxq[(i, q)] = model.hyper.eval(&model.train_x[i], &queries[q]);
        }
    }

    let g = model.prior.value();
    let mut mean = Matrix::zeros(nq, out_dim);
    for o in 0..out_dim {
        for q in 0..nq {
            let mut s = 0.0;
            for i in 0..n {
                s += kxq[(i, q)] * model.alpha[(i, o)];
            }
            mean[(q, o)] = g + s;
        }
    }

    // V = L^{-1} Kxq, column by column; cov = Kqq - VᵀV.
    let mut v = Matrix::zeros(n, nq);
    for q in 0..nq {
        let col = forward_sub(&model.chol, kxq.col(q));
        v.col_mut(q).copy_from_slice(&col);
    }
    let mut cov = Matrix::zeros(nq, nq);
    for a in 0..nq {
        for b in 0..=a {
            let mut kqq = model.hyper.eval(&queries[a], &queries[b]);
            for i in 0..n {
                kqq -= v[(i, a)] * v[(i, b)];
            }
            cov[(a, b)] = kqq;
            cov[(b, a)] = kqq;
        }
    }
    for q in 0..nq {
        let d = cov[(q, q)];
        if d < -1e-10 * model.hyper.s2 {
            return Err(RomError::Convergence(format!(
                "gpr_predict: posterior variance {d:.3e} fell below the roundoff tolerance"
            )));
        }
        if d < 0.0 {
            cov[(q, q)] = 0.0;
        }
    }
    Ok((mean, cov))
}

/// Log marginal likelihood of the training data under the fitted model,
/// summed over output columns:
/// `sum_o [ -1/2 y_oᵀ alpha_o - sum_i log L_ii - N/2 log 2pi ]`.
pub fn gpr_log_marginal_likelihood(model: &GprModel) -> f64 {
    let n = model.len();
    let log_det_half: f64 = (0..n).map(|i| model.chol[(i, i)].ln()).sum();
    let norm_term = 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for o in 0..model.output_dim() {
        let fit_term: f64 = (0..n)
            .map(|i| model.y_centered[(i, o)] * model.alpha[(i, o)])
            .sum();
        total += -0.5 * fit_term - log_det_half - norm_term;
    }
    total
}

/// Fit every candidate and keep the one with the highest log marginal
/// likelihood. Near-ties (within `1e-9 * (1 + |best|)`) are broken in favor
/// of the smaller length scales, then the smaller noise level, so the
/// selection is deterministic and independent of candidate order.
pub fn gpr_select_hyperparams(
    points: &[Vec<f64>],
    values: &[Vec<f64>],
    prior: PriorMean,
    candidates: &[GprHyper],
) -> Result<GprModel> {
    if candidates.is_empty() {
        return Err(RomError::Invalid("gpr_select_hyperparams: empty candidate list".into()));
    }
    let mut best: Option<(GprModel, f64)> = None;
    for cand in candidates {
        let model = gpr_fit(points, values, cand.clone(), prior)?;
        let lml = gpr_log_marginal_likelihood(&model);
        match &best {
            None => best = Some((model, lml)),
            Some((cur, cur_lml)) => {
                let tie_tol = 1e-9 * (1.0 + cur_lml.abs().max(lml.abs()));
                if lml > cur_lml + tie_tol {
                    best = Some((model, lml));
                } else if (lml - cur_lml).abs() <= tie_tol
                    && prefer_hyper(&model.hyper, &cur.hyper)
                {
                    best = Some((model, lml));
                }
            }
        }
    }
    Ok(best.unwrap().0)
}

/// True when `a` wins the deterministic tie-break over `b`: lexicographically
/// smaller length scales, then smaller noise.
fn prefer_hyper(a: &GprHyper, b: &GprHyper) -> bool {
    for (x, y) in a.ell.iter().zip(&b.ell) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    a.sigma < b.sigma
}
