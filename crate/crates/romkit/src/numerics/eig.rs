//! Eigendecompositions: cyclic Jacobi for symmetric matrices and a complex
//! Hessenberg-QR solver for small general real matrices whose spectra may be
//! complex.

use super::Matrix;
use crate::error::{Result, RomError};
use num_complex::Complex64;

/// Spectral factorization `A = V diag(values) Vᵀ` of a symmetric matrix.
/// Eigenvalues are sorted nonincreasing; column `k` of `vectors` is the unit
/// eigenvector for `values[k]`.
#[derive(Debug, Clone)]
pub struct EigSymResult {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// Eigenpairs of a general real matrix. `values[k]` pairs with the unit-norm
/// complex vector `vectors[k]`; pairs are sorted by nonincreasing modulus
/// (ties broken by real part, then imaginary part, so the order is
/// deterministic).
#[derive(Debug, Clone)]
pub struct EigRealResult {
    pub values: Vec<Complex64>,
    pub vectors: Vec<Vec<Complex64>>,
}

const SYM_MAX_SWEEPS: usize = 50;
const QR_MAX_ITERS_PER_EIGENVALUE: usize = 40;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// The input must be square with asymmetry below `1e-10 * max(1, |A|_max)`;
/// only the value `A[i,j]` with `i <= j` is actually read, so tiny roundoff
/// asymmetry from matrix products is tolerated.
pub fn eig_sym(a: &Matrix) -> Result<EigSymResult> {
    if a.rows() != a.cols() {
        return Err(RomError::Shape(format!("eig_sym: matrix is {}x{}, need square", a.rows(), a.cols())));
    }
    a.ensure_finite("eig_sym")?;
    let scale = a.max_abs().max(1.0);
    if a.asymmetry() > 1e-10 * scale {
        return Err(RomError::Invalid(format!(
            "eig_sym: matrix is not symmetric (asymmetry {:.3e})",
            a.asymmetry()
        )));
    }

    let n = a.rows();
    // Symmetrize exactly so the rotations preserve symmetry bit for bit.
    let mut b = Matrix::from_fn(n, n, |i, j| {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        a[(lo, hi)]
    });
    let mut v = Matrix::identity(n);

    let off = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
        (2.0 * s).sqrt()
    };
    let frob = b.frobenius_norm().max(f64::MIN_POSITIVE);

    let mut converged = off(&b) <= 1e-14 * frob;
    for _sweep in 0..SYM_MAX_SWEEPS {
        if converged {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = b[(p, q)];
                if apq.abs() <= 1e-16 * frob {
                    continue;
                }
                let app = b[(p, p)];
                let aqq = b[(q, q)];
                let zeta = (aqq - app) / (2.0 * apq);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;

                // B <- Jᵀ B J on rows/columns p and q.
                for i in 0..n {
                    if i == p || i == q {
                        continue;
                    }
                    let (lo_p, hi_p) = if i < p { (i, p) } else { (p, i) };
                    let (lo_q, hi_q) = if i < q { (i, q) } else { (q, i) };
                    let bip = b[(lo_p, hi_p)];
                    let biq = b[(lo_q, hi_q)];
                    let new_ip = c * bip - s * biq;
                    let new_iq = s * bip + c * biq;
                    b[(lo_p, hi_p)] = new_ip;
                    b[(hi_p, lo_p)] = new_ip;
                    b[(lo_q, hi_q)] = new_iq;
                    b[(hi_q, lo_q)] = new_iq;
                }
                b[(p, p)] = app - t * apq;
                b[(q, q)] = aqq + t * apq;
                b[(p, q)] = 0.0;
                b[(q, p)] = 0.0;

                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
        converged = off(&b) <= 1e-14 * frob;
    }
    if !converged {
        return Err(RomError::Convergence(format!(
            "eig_sym: Jacobi sweeps left off-diagonal mass {:.3e} after {SYM_MAX_SWEEPS} passes",
            off(&b)
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| b[(j, j)].partial_cmp(&b[(i, i)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&k| b[(k, k)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, dst)] = v[(i, src)];
        }
    }
    Ok(EigSymResult { values, vectors })
}

/// Eigenpairs of a general real square matrix, computed as: complex
/// Hessenberg reduction, single-shift QR iteration with Wilkinson shifts for
/// the eigenvalues, then inverse iteration against the original matrix for
/// the eigenvectors.
///
/// Intended for small dense systems (reduced operators, stability studies).
/// Matrices with defective eigenvalues may come back with nearly collinear
/// vectors for the repeated eigenvalue; callers that invert the eigenvector
/// matrix should check its conditioning.
pub fn eig_real(a: &Matrix) -> Result<EigRealResult> {
    if a.rows() != a.cols() {
        return Err(RomError::Shape(format!("eig_real: matrix is {}x{}, need square", a.rows(), a.cols())));
    }
    a.ensure_finite("eig_real")?;
    let n = a.rows();

    if n == 1 {
        return Ok(EigRealResult {
            values: vec![Complex64::new(a[(0, 0)], 0.0)],
            vectors: vec![vec![Complex64::new(1.0, 0.0)]],
        });
    }

    let mut h = CMat::from_real(a);
    hessenberg(&mut h);
    let mut values = qr_eigenvalues(h)?;
    sort_eigenvalues(&mut values);
    let vectors = inverse_iteration_vectors(a, &values)?;
    Ok(EigRealResult { values, vectors })
}

fn sort_eigenvalues(values: &mut [Complex64]) {
    values.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap()
            .then(b.re.partial_cmp(&a.re).unwrap())
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
}

/// Minimal column-major complex matrix used only inside this solver.
#[derive(Clone)]
struct CMat {
    n: usize,
    d: Vec<Complex64>,
}

impl CMat {
    fn from_real(a: &Matrix) -> CMat {
        let n = a.rows();
        let mut d = vec![Complex64::new(0.0, 0.0); n * n];
        for j in 0..n {
            for i in 0..n {
                d[j * n + i] = Complex64::new(a[(i, j)], 0.0);
            }
        }
        CMat { n, d }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> Complex64 {
        self.d[j * self.n + i]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut Complex64 {
        &mut self.d[j * self.n + i]
    }

    fn max_abs(&self) -> f64 {
        self.d.iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }
}

/// Reduce to upper Hessenberg form with complex Householder reflectors.
fn hessenberg(h: &mut CMat) {
    let n = h.n;
    for k in 0..n.saturating_sub(2) {
        // Build the reflector that zeroes column k below row k+1.
        let mut normx_sq = 0.0;
        for i in (k + 1)..n {
            normx_sq += h.at(i, k).norm_sqr();
        }
        let normx = normx_sq.sqrt();
        if normx == 0.0 {
            continue;
        }
        let x0 = h.at(k + 1, k);
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { Complex64::new(1.0, 0.0) };
        let alpha = -phase * normx;
        let mut v: Vec<Complex64> = ((k + 1)..n).map(|i| h.at(i, k)).collect();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vtv == 0.0 {
            continue;
        }
        let beta = 2.0 / vtv;

        // H <- (I - beta v v^H) H on rows k+1..n.
        for j in k..n {
            let mut s = Complex64::new(0.0, 0.0);
            for (off, vi) in v.iter().enumerate() {
                s += vi.conj() * h.at(k + 1 + off, j);
            }
            s *= beta;
            for (off, vi) in v.iter().enumerate() {
                *h.at_mut(k + 1 + off, j) -= s * vi;
            }
        }
        // H <- H (I - beta v v^H) on columns k+1..n.
        for i in 0..n {
            let mut s = Complex64::new(0.0, 0.0);
            for (off, vi) in v.iter().enumerate() {
                s += h.at(i, k + 1 + off) * vi;
            }
            s *= beta;
            for (off, vi) in v.iter().enumerate() {
                *h.at_mut(i, k + 1 + off) -= s * vi.conj();
            }
        }
    }
    // Clean the (now numerically zero) entries below the first subdiagonal.
    for j in 0..n {
        for i in (j + 2)..n {
            *h.at_mut(i, j) = Complex64::new(0.0, 0.0);
        }
    }
}

/// Single-shift QR iteration with deflation on a complex Hessenberg matrix.
fn qr_eigenvalues(mut h: CMat) -> Result<Vec<Complex64>> {
    let n = h.n;
    let scale = h.max_abs().max(f64::MIN_POSITIVE);
    let mut values = Vec::with_capacity(n);
    let mut m = n; // active block is rows/cols 0..m
    let mut iters_at_m = 0usize;
    while m > 0 {
        if m == 1 {
            values.push(h.at(0, 0));
            m = 0;
            continue;
        }
        // Deflate wherever a subdiagonal entry is negligible.
        let sub = h.at(m - 1, m - 2).norm();
        let local = h.at(m - 2, m - 2).norm() + h.at(m - 1, m - 1).norm();
        let tol = f64::EPSILON * local.max(scale * 1e-3);
        if sub <= tol {
            values.push(h.at(m - 1, m - 1));
            m -= 1;
            iters_at_m = 0;
            continue;
        }
        if iters_at_m >= QR_MAX_ITERS_PER_EIGENVALUE {
            return Err(RomError::Convergence(format!(
                "eig_real: QR iteration stalled with {m} eigenvalues remaining"
            )));
        }

        // Wilkinson shift from the trailing 2x2 block, with an occasional
        // exceptional shift to break rare cycles.
        let mu = if iters_at_m > 0 && iters_at_m % 12 == 0 {
            h.at(m - 1, m - 1) + Complex64::new(0.75 * sub, 0.0)
        } else {
            wilkinson_shift(h.at(m - 2, m - 2), h.at(m - 2, m - 1), h.at(m - 1, m - 2), h.at(m - 1, m - 1))
        };

        qr_step(&mut h, m, mu);
        iters_at_m += 1;
    }
    values.reverse();
    Ok(values)
}

/// Eigenvalue of [[a, b], [c, d]] closer to d.
fn wilkinson_shift(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Complex64 {
    let tr_half = (a + d) * 0.5;
    let disc = ((a - d) * (a - d) * 0.25 + b * c).sqrt();
    let lam1 = tr_half + disc;
    let lam2 = tr_half - disc;
    if (lam1 - d).norm() <= (lam2 - d).norm() {
        lam1
    } else {
        lam2
    }
}

/// One explicit shifted QR sweep on the leading `m x m` block:
/// H - mu I = QR (via Givens rotations), then H <- R Q + mu I.
fn qr_step(h: &mut CMat, m: usize, mu: Complex64) {
    for i in 0..m {
        *h.at_mut(i, i) -= mu;
    }
    let mut rotations: Vec<(f64, Complex64)> = Vec::with_capacity(m - 1);
    for k in 0..(m - 1) {
        let a = h.at(k, k);
        let b = h.at(k + 1, k);
        let (c, s) = complex_givens(a, b);
        // Rows k, k+1 of columns k..m.
        for j in k..m {
            let top = h.at(k, j);
            let bot = h.at(k + 1, j);
            *h.at_mut(k, j) = c * top + s * bot;
            *h.at_mut(k + 1, j) = -s.conj() * top + c * bot;
        }
        rotations.push((c, s));
    }
    // H <- R Q: apply the conjugated rotations from the right, in order.
    for (k, &(c, s)) in rotations.iter().enumerate() {
        let upto = (k + 2).min(m);
        for i in 0..upto {
            let left = h.at(i, k);
            let right = h.at(i, k + 1);
            *h.at_mut(i, k) = c * left + s.conj() * right;
            *h.at_mut(i, k + 1) = -s * left + c * right;
        }
    }
    for i in 0..m {
        *h.at_mut(i, i) += mu;
    }
}

/// Unitary plane rotation [[c, s], [-conj(s), c]] with real c >= 0 sending
/// (a, b) to (r, 0).
fn complex_givens(a: Complex64, b: Complex64) -> (f64, Complex64) {
    let na = a.norm();
    let nb = b.norm();
    if nb == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if na == 0.0 {
        return (0.0, Complex64::new(1.0, 0.0));
    }
    let r = (na * na + nb * nb).sqrt();
    let c = na / r;
    let s = (a / na) * b.conj() / r;
    (c, s)
}

/// Partial-pivot LU solve for inverse iteration. Exactly singular pivots are
/// bumped to a tiny magnitude instead of failing: inverse iteration wants
/// nearly singular systems.
struct CLu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
}

impl CLu {
    fn factor(a: &CMat, shift: Complex64) -> CLu {
        let n = a.n;
        let mut lu = a.d.clone();
        for i in 0..n {
            lu[i * n + i] -= shift;
        }
        let scale = lu.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut best = k;
            let mut best_mag = lu[k * n + k].norm();
            for i in (k + 1)..n {
                let mag = lu[k * n + i].norm();
                if mag > best_mag {
                    best = i;
                    best_mag = mag;
                }
            }
            if best != k {
                perm.swap(k, best);
                for j in 0..n {
                    lu.swap(j * n + k, j * n + best);
                }
            }
            if lu[k * n + k].norm() < f64::EPSILON * scale {
                lu[k * n + k] = Complex64::new(f64::EPSILON * scale, 0.0);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[k * n + i] / pivot;
                lu[k * n + i] = factor;
                for j in (k + 1)..n {
                    let above = lu[j * n + k];
                    lu[j * n + i] -= factor * above;
                }
            }
        }
        CLu { n, lu, perm }
    }

    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for k in 0..n {
            for i in (k + 1)..n {
                let lik = self.lu[k * n + i];
                let xk = x[k];
                x[i] -= lik * xk;
            }
        }
        for k in (0..n).rev() {
            for j in (k + 1)..n {
                let ukj = self.lu[j * n + k];
                let xj = x[j];
                x[k] -= ukj * xj;
            }
            x[k] /= self.lu[k * n + k];
        }
        x
    }
}

fn inverse_iteration_vectors(a: &Matrix, values: &[Complex64]) -> Result<Vec<Vec<Complex64>>> {
    let n = a.rows();
    let ac = CMat::from_real(a);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let mut vectors: Vec<Vec<Complex64>> = Vec::with_capacity(values.len());

    for (idx, &lam) in values.iter().enumerate() {
        // Repeated eigenvalues get a slightly different shift and start so
        // independent directions can emerge when the eigenspace allows it.
        let cluster: Vec<usize> = (0..idx)
            .filter(|&j| (values[j] - lam).norm() <= 1e-10 * scale.max(1.0))
            .collect();
        let jitter = Complex64::new(0.0, 0.0)
            + Complex64::new(1e-11 * scale, 1e-11 * scale) * cluster.len() as f64;
        let lu = CLu::factor(&ac, lam + jitter);

        let mut x: Vec<Complex64> = (0..n)
            .map(|i| {
                let bump = if i == idx % n { 1.0 } else { 0.0 };
                Complex64::new(1.0 + bump, 0.0)
            })
            .collect();
        normalize_complex(&mut x);
        for _ in 0..3 {
            let mut y = lu.solve(&x);
            // Bias away from previously found vectors of the same eigenvalue.
            for j in &cluster {
                let prev = &vectors[*j];
                let proj: Complex64 = prev.iter().zip(&y).map(|(p, q)| p.conj() * q).sum();
                for (yi, pi) in y.iter_mut().zip(prev) {
                    *yi -= proj * pi;
                }
            }
            let norm: f64 = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                // Deflated start hit an empty direction; fall back to the
                // unbiased solve.
                y = lu.solve(&x);
            }
            x = y;
            normalize_complex(&mut x);
        }
        fix_phase(&mut x);

        // Residual safety net: a wildly wrong vector means the iteration
        // failed to converge (e.g. pathologically clustered spectrum).
        let mut residual = 0.0f64;
        for i in 0..n {
            let mut axi = Complex64::new(0.0, 0.0);
            for j in 0..n {
                axi += Complex64::new(a[(i, j)], 0.0) * x[j];
            }
            residual = residual.max((axi - lam * x[i]).norm());
        }
        if residual > 1e-6 * scale.max(1.0) {
            return Err(RomError::Convergence(format!(
                "eig_real: inverse iteration residual {residual:.3e} for eigenvalue {lam}"
            )));
        }
        vectors.push(x);
    }
    Ok(vectors)
}

fn normalize_complex(x: &mut [Complex64]) {
    let norm: f64 = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        for z in x.iter_mut() {
            *z /= norm;
        }
    }
}

/// Rotate a unit vector so its largest-modulus entry is real positive; this
/// pins down the free phase and makes results reproducible.
fn fix_phase(x: &mut [Complex64]) {
    let mut best = 0;
    let mut best_mag = 0.0;
    for (i, z) in x.iter().enumerate() {
        if z.norm() > best_mag {
            best_mag = z.norm();
            best = i;
        }
    }
    if best_mag > 0.0 {
        let phase = x[best] / best_mag;
        let rot = phase.conj();
        for z in x.iter_mut() {
            *z *= rot;
        }
    }
}
