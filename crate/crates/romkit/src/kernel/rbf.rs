//! Radial basis function interpolation with an optional polynomial tail.
//!
//! Fitting solves the augmented saddle system
//! `[[Psi, P], [Pᵀ, 0]] [w; c] = [y; 0]` where `Psi[k][i] = psi(|x_k - x_i|)`
//! and `P[k][j] = p_j(x_k)`. The zero block below enforces the side
//! conditions `sum_i w_i p_j(x_i) = 0`, which make the interpolant exact on
//! the polynomial tail's span.

use crate::error::{Result, RomError};
use crate::numerics::{svd, LuFactors, Matrix};

/// Radial kernel choices. `eps` is the inverse length scale of the
/// parametric kernels; [`median_pairwise_distance`] gives a robust default
/// (`eps = 1 / median`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RbfKernel {
    Gaussian { eps: f64 },
    Multiquadric { eps: f64 },
    ThinPlate,
    Linear,
}

impl RbfKernel {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            RbfKernel::Gaussian { eps } => (-(eps * r) * (eps * r)).exp(),
            RbfKernel::Multiquadric { eps } => (1.0 + (eps * r) * (eps * r)).sqrt(),
            RbfKernel::ThinPlate => {
                if r == 0.0 {
                    0.0
                } else {
                    r * r * r.ln()
                }
            }
            RbfKernel::Linear => r,
        }
    }

    /// Stable identifier used in persisted models.
    pub fn tag(&self) -> String {
        match self {
            RbfKernel::Gaussian { eps } => format!("gaussian:{eps:.17e}"),
            RbfKernel::Multiquadric { eps } => format!("multiquadric:{eps:.17e}"),
            RbfKernel::ThinPlate => "thin_plate".into(),
            RbfKernel::Linear => "linear".into(),
        }
    }

    pub fn from_tag(tag: &str) -> Result<RbfKernel> {
        if let Some(eps) = tag.strip_prefix("gaussian:") {
            let eps = eps.parse().map_err(|_| RomError::Format(format!("bad kernel tag {tag}")))?;
            return Ok(RbfKernel::Gaussian { eps });
        }
        if let Some(eps) = tag.strip_prefix("multiquadric:") {
            let eps = eps.parse().map_err(|_| RomError::Format(format!("bad kernel tag {tag}")))?;
            return Ok(RbfKernel::Multiquadric { eps });
        }
        match tag {
            "thin_plate" => Ok(RbfKernel::ThinPlate),
            "linear" => Ok(RbfKernel::Linear),
            _ => Err(RomError::Format(format!("unknown kernel tag {tag}"))),
        }
    }
}

/// Polynomial tail attached to the kernel expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbfTail {
    None,
    /// Constant plus all coordinates (m+1 terms) — unisolvent for degree 1.
    Affine,
    /// Coordinates only, no constant (m terms). Matches formulations that
    /// list only coordinate terms; kept behind this explicit variant because
    /// it cannot reproduce constant shifts.
    CoordinatesOnly,
}

impl RbfTail {
    fn term_count(&self, dim: usize) -> usize {
        match self {
            RbfTail::None => 0,
            RbfTail::Affine => dim + 1,
            RbfTail::CoordinatesOnly => dim,
        }
    }

    fn eval_term(&self, j: usize, x: &[f64]) -> f64 {
        match self {
            RbfTail::None => unreachable!("no tail terms"),
            RbfTail::Affine => {
                if j == 0 {
                    1.0
                } else {
                    x[j - 1]
                }
            }
            RbfTail::CoordinatesOnly => x[j],
        }
    }
}

/// Fitted interpolant: kernel weights per center and tail coefficients, one
/// column per output component.
#[derive(Debug, Clone)]
pub struct RbfModel {
    pub centers: Vec<Vec<f64>>,
    /// centers × outputs.
    pub weights: Matrix,
    /// tail terms × outputs (1×outputs zero block when there is no tail).
    pub tail_coeffs: Option<Matrix>,
    pub kernel: RbfKernel,
    pub tail: RbfTail,
    /// Fit diagnostics, e.g. cost warnings on very large center sets.
    pub notes: Vec<String>,
}

impl RbfModel {
    pub fn input_dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Median of all pairwise distances; a robust length scale for kernels that
/// need one (`eps = 1/median`). Returns 1 for a single point.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut dists = Vec::new();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            dists.push(distance(&points[i], &points[j]));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists[dists.len() / 2]
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Interpolate `values[k]` at `points[k]`. Points must be pairwise distinct;
/// every value vector must have the same length (the output dimension).
pub fn rbf_fit(
    points: &[Vec<f64>],
    values: &[Vec<f64>],
    kernel: RbfKernel,
    tail: RbfTail,
) -> Result<RbfModel> {
    if points.is_empty() {
        return Err(RomError::Invalid("rbf_fit: need at least one point".into()));
    }
    if points.len() != values.len() {
        return Err(RomError::Shape(format!(
            "rbf_fit: {} points but {} value rows",
            points.len(),
            values.len()
        )));
    }
    let dim = points[0].len();
    let out_dim = values[0].len();
    if dim == 0 || out_dim == 0 {
        return Err(RomError::Invalid("rbf_fit: empty point or value vectors".into()));
    }
    if points.iter().any(|p| p.len() != dim) || values.iter().any(|v| v.len() != out_dim) {
        return Err(RomError::Shape("rbf_fit: ragged points or values".into()));
    }
    if points.iter().flatten().chain(values.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(RomError::NonFinite("rbf_fit: inputs contain NaN or infinity".into()));
    }
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            if distance(&points[i], &points[j]) <= 1e-12 {
                return Err(RomError::Invalid(format!(
                    "rbf_fit: centers {i} and {j} coincide (distance <= 1e-12)"
                )));
            }
        }
    }

    let k = points.len();
    let q = tail.term_count(dim);
    if q > 0 && k < q {
        return Err(RomError::Invalid(format!(
            "rbf_fit: {k} points cannot support a {q}-term polynomial tail"
        )));
    }
    let n = k + q;

    let mut a = Matrix::zeros(n, n);
    for row in 0..k {
        for col in 0..k {
            a[(row, col)] = kernel.eval(distance(&points[row], &points[col]));
        }
        for j in 0..q {
            let pj = tail.eval_term(j, &points[row]);
            a[(row, k + j)] = pj;
            a[(k + j, row)] = pj;
        }
    }

    let mut rhs = Matrix::zeros(n, out_dim);
    for (row, v) in values.iter().enumerate() {
        for (o, &y) in v.iter().enumerate() {
            rhs[(row, o)] = y;
        }
    }

    let factors = match LuFactors::factor(&a) {
        Ok(f) => f,
        Err(RomError::Singular { pivot, .. }) => {
            // Estimate conditioning for the error report; the system is
            // small enough that an SVD is affordable here.
            let cond = svd(&a, None, Some(0.0))
                .ok()
                .map(|d| d.sigma[0] / d.sigma[d.rank() - 1].max(f64::MIN_POSITIVE));
            return Err(RomError::Singular {
                context: format!(
                    "rbf_fit: augmented interpolation system is singular (pivot {pivot}, \
                     condition estimate {})",
                    cond.map(|c| format!("{c:.3e}")).unwrap_or_else(|| "unavailable".into())
                ),
                pivot,
            });
        }
        Err(e) => return Err(e),
    };
    let sol = factors.solve(&rhs)?;

    let mut weights = Matrix::zeros(k, out_dim);
    for o in 0..out_dim {
        for i in 0..k {
            weights[(i, o)] = sol[(i, o)];
        }
    }
    let tail_coeffs = if q > 0 {
        let mut c = Matrix::zeros(q, out_dim);
        for o in 0..out_dim {
            for j in 0..q {
                c[(j, o)] = sol[(k + j, o)];
            }
        }
        Some(c)
    } else {
        None
    };

    let mut notes = Vec::new();
    if k > 5000 {
        notes.push(format!(
            "rbf_fit: {k} centers; dense fit cost grows cubically with the center count"
        ));
    }

    Ok(RbfModel { centers: points.to_vec(), weights, tail_coeffs, kernel, tail, notes })
}

/// Evaluate the interpolant:
/// `f_o(x) = sum_i w[i][o] psi(|x - x_i|) + sum_j c[j][o] p_j(x)`.
pub fn rbf_eval(model: &RbfModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.input_dim() {
        return Err(RomError::Shape(format!(
            "rbf_eval: query dim {} does not match centers dim {}",
            x.len(),
            model.input_dim()
        )));
    }
    let out_dim = model.output_dim();
    let mut out = vec![0.0; out_dim];
    for (i, center) in model.centers.iter().enumerate() {
        let psi = model.kernel.eval(distance(x, center));
        if psi == 0.0 {
            continue;
        }
        for (o, acc) in out.iter_mut().enumerate() {
            *acc += model.weights[(i, o)] * psi;
        }
    }
    if let Some(c) = &model.tail_coeffs {
        for j in 0..c.rows() {
            let pj = model.tail.eval_term(j, x);
            for (o, acc) in out.iter_mut().enumerate() {
                *acc += c[(j, o)] * pj;
            }
        }
    }
    Ok(out)
}
