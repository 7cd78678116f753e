//! Dynamic mode decomposition: fit a rank-truncated linear time-advance
//! operator to an equispaced snapshot sequence, extract its eigenstructure,
//! and reconstruct or forecast states at arbitrary grid-aligned times.
//!
//! The reduced operator is stored r × r; the full n × n operator it encodes
//! is never materialized (for large state dimension that would be
//! prohibitive), but can be formed on demand for small diagnostics via
//! [`DmdModel::lift_operator`].

use crate::dataset::{SnapshotMeta, SnapshotSet};
use crate::error::{Result, RomError};
use crate::numerics::{eig_real, norm2, svd, Matrix};
use crate::reduction::PodCriterion;
use num_complex::Complex64;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Fitted time-advance model.
#[derive(Debug, Clone)]
pub struct DmdModel {
    /// Orthonormal basis of the first snapshot block (n × r).
    pub u: Matrix,
    /// Reduced operator in that basis (r × r).
    pub atilde: Matrix,
    /// Eigenvalues of the reduced operator.
    pub eigenvalues: Vec<Complex64>,
    /// Exact dynamic modes, one complex n-vector per eigenvalue.
    pub modes: Vec<Vec<Complex64>>,
    /// Mode amplitudes from the least-squares fit against the first
    /// snapshot.
    pub amplitudes: Vec<Complex64>,
    /// Uniform step between consecutive snapshots.
    pub dt: f64,
    /// Time stamp of the first snapshot; step k corresponds to
    /// `t0 + k * dt`.
    pub t0: f64,
    /// Parameter vector of the fitted trajectory.
    pub param: Vec<f64>,
    /// Relative residual of the amplitude fit at the first snapshot.
    pub amplitude_residual: f64,
    /// Human-readable fit diagnostics (e.g. forced rank reductions).
    pub notes: Vec<String>,
}

impl DmdModel {
    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn state_dim(&self) -> usize {
        self.u.rows()
    }

    /// Materialize the full-order operator `U Ã Uᵀ`. Only sensible for small
    /// state dimensions; meant for diagnostics and tests.
    pub fn lift_operator(&self) -> Matrix {
        self.u.matmul(&self.atilde).matmul(&self.u.transpose())
    }
}

/// Fit a model to a single-parameter, uniformly sampled time series.
///
/// The snapshot columns are paired as consecutive states: the first block
/// holds columns 1..K-1, the second columns 2..K, so the second block is one
/// step ahead of the first everywhere. Rank selection mirrors the POD
/// criterion; if the data cannot support the requested rank (singular values
/// at the noise floor), the rank is reduced and a note recorded on the
/// model.
pub fn dmd_fit(sequence: &SnapshotSet, rank: PodCriterion) -> Result<DmdModel> {
    let k_total = sequence.len();
    if k_total < 2 {
        return Err(RomError::Invalid(format!(
            "dmd_fit: need at least 2 snapshots, got {k_total}"
        )));
    }
    let groups = sequence.group_by_param();
    if groups.len() != 1 {
        return Err(RomError::Invalid(format!(
            "dmd_fit: expected a single-parameter time series, found {} distinct parameters",
            groups.len()
        )));
    }
    let times = sequence.times();
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return Err(RomError::Invalid("dmd_fit: time stamps must be strictly increasing".into()));
    }
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
            return Err(RomError::Invalid(format!(
                "dmd_fit: non-uniform step between snapshots {i} and {} ({} vs {dt})",
                i + 1,
                w[1] - w[0]
            )));
        }
    }

    let s = sequence.matrix();
    let s1 = s.submatrix_cols(0, k_total - 1);
    let s2 = s.submatrix_cols(1, k_total);

    let (cap, requested) = match rank {
        PodCriterion::Rank(r) => {
            if r == 0 {
                return Err(RomError::Invalid("dmd_fit: rank must be at least 1".into()));
            }
            (Some(r), Some(r))
        }
        PodCriterion::EnergyFraction(eta) => {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(RomError::Invalid(format!(
                    "dmd_fit: energy fraction {eta} must lie in (0, 1]"
                )));
            }
            (None, None)
        }
    };
    let decomp = svd(&s1, cap, None)?;
    let r = match rank {
        PodCriterion::Rank(_) => decomp.rank(),
        PodCriterion::EnergyFraction(eta) => {
            let total: f64 = decomp.sigma.iter().map(|x| x * x).sum();
            let mut cum = 0.0;
            let mut r = decomp.rank();
            for (i, x) in decomp.sigma.iter().enumerate() {
                cum += x * x;
                if cum >= eta * total {
                    r = i + 1;
                    break;
                }
            }
            r
        }
    };
    let mut notes = Vec::new();
    if let Some(req) = requested {
        if r < req {
            notes.push(format!(
                "rank reduced from {req} to {r}: trailing singular values at the noise floor"
            ));
        }
    }

    let u = decomp.u.submatrix_cols(0, r);
    // P = S2 V diag(1/sigma): the image of the basis under the one-step map.
    let mut v_scaled = decomp.v.submatrix_cols(0, r);
    for j in 0..r {
        let inv = 1.0 / decomp.sigma[j];
        for x in v_scaled.col_mut(j) {
            *x *= inv;
        }
    }
    let p = s2.matmul(&v_scaled);
    let atilde = u.transpose().matmul(&p);

    let eig = eig_real(&atilde)?;
    let modes: Vec<Vec<Complex64>> =
        eig.vectors.iter().map(|w| real_matmul_complex(&p, w)).collect();

    // Amplitudes: least squares against the first snapshot via the complex
    // normal equations (r is small, conditioning is manageable).
    let x1 = sequence.snapshot(0);
    let mut gram = vec![Complex64::new(0.0, 0.0); r * r];
    let mut rhs = vec![Complex64::new(0.0, 0.0); r];
    for a in 0..r {
        for b in 0..r {
            let mut sum = Complex64::new(0.0, 0.0);
            for i in 0..modes[a].len() {
                sum += modes[a][i].conj() * modes[b][i];
            }
            gram[b * r + a] = sum;
        }
        let mut sum = Complex64::new(0.0, 0.0);
        for (i, &x) in x1.iter().enumerate() {
            sum += modes[a][i].conj() * x;
        }
        rhs[a] = sum;
    }
    let amplitudes = solve_complex_dense(r, gram, rhs, "dmd amplitude fit")?;

    let mut residual_sq = 0.0;
    for (i, &x) in x1.iter().enumerate() {
        let mut fit = Complex64::new(0.0, 0.0);
        for (m, b) in modes.iter().zip(&amplitudes) {
            fit += m[i] * b;
        }
        residual_sq += (fit - x).norm_sqr();
    }
    let x1_norm = norm2(x1).max(f64::MIN_POSITIVE);
    let amplitude_residual = residual_sq.sqrt() / x1_norm;

    Ok(DmdModel {
        u,
        atilde,
        eigenvalues: eig.values,
        modes,
        amplitudes,
        dt,
        t0: times[0],
        param: groups[0].0.clone(),
        amplitude_residual,
        notes,
    })
}

/// State forecast `k` whole steps after the first snapshot:
/// real part of `sum_i mode_i * lambda_i^k * b_i`. The second return value is
/// the largest imaginary magnitude discarded, a consistency diagnostic
/// (conjugate mode pairs should cancel it to roundoff).
pub fn dmd_predict(model: &DmdModel, k: usize) -> (Vec<f64>, f64) {
    let n = model.state_dim();
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    for ((mode, lam), b) in model.modes.iter().zip(&model.eigenvalues).zip(&model.amplitudes) {
        let w = lam.powu(k as u32) * b;
        for (a, m) in acc.iter_mut().zip(mode) {
            *a += m * w;
        }
    }
    let mut imag_max = 0.0f64;
    let state = acc
        .iter()
        .map(|z| {
            imag_max = imag_max.max(z.im.abs());
            z.re
        })
        .collect();
    (state, imag_max)
}

/// Map a time stamp onto the model's step grid. Times must align with
/// `t0 + k*dt` for a nonnegative whole k.
pub fn step_for_time(model: &DmdModel, t: f64) -> Result<usize> {
    let kf = (t - model.t0) / model.dt;
    let k = kf.round();
    if (kf - k).abs() > 1e-6 || k < -1e-6 {
        return Err(RomError::Invalid(format!(
            "time {t} is not on the step grid t0={} dt={}",
            model.t0, model.dt
        )));
    }
    Ok(k as usize)
}

/// Columnwise [`dmd_predict`] over a list of grid-aligned times. Returns the
/// reconstructed set and the largest discarded imaginary magnitude.
pub fn dmd_reconstruct(model: &DmdModel, times: &[f64]) -> Result<(SnapshotSet, f64)> {
    if times.is_empty() {
        return Err(RomError::Invalid("dmd_reconstruct: empty time list".into()));
    }
    let mut m = Matrix::zeros(model.state_dim(), times.len());
    let mut imag_max = 0.0f64;
    for (j, &t) in times.iter().enumerate() {
        let k = step_for_time(model, t)?;
        let (state, im) = dmd_predict(model, k);
        imag_max = imag_max.max(im);
        m.col_mut(j).copy_from_slice(&state);
    }
    let params = vec![model.param.clone(); times.len()];
    let meta = SnapshotMeta { field: "state".into(), provenance: "dmd-reconstruction".into() };
    Ok((SnapshotSet::new(m, params, times.to_vec(), meta)?, imag_max))
}

/// Multiply a real matrix by a complex vector.
fn real_matmul_complex(m: &Matrix, x: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); m.rows()];
    for (j, xj) in x.iter().enumerate() {
        let col = m.col(j);
        for (o, &c) in out.iter_mut().zip(col) {
            *o += xj * c;
        }
    }
    out
}

/// Dense complex solve with partial pivoting; `a` is column-major n × n and
/// consumed in place.
fn solve_complex_dense(
    n: usize,
    mut a: Vec<Complex64>,
    mut b: Vec<Complex64>,
    context: &str,
) -> Result<Vec<Complex64>> {
    let scale = a.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
    for k in 0..n {
        let mut best = k;
        let mut best_mag = a[k * n + k].norm();
        for i in (k + 1)..n {
            let mag = a[k * n + i].norm();
            if mag > best_mag {
                best = i;
                best_mag = mag;
            }
        }
        if best_mag <= 1e-13 * scale {
            return Err(RomError::Singular { context: context.into(), pivot: k });
        }
        if best != k {
            for j in 0..n {
                a.swap(j * n + k, j * n + best);
            }
            b.swap(k, best);
        }
        let pivot = a[k * n + k];
        for i in (k + 1)..n {
            let f = a[k * n + i] / pivot;
            if f.norm() == 0.0 {
                continue;
            }
            for j in (k + 1)..n {
                let akj = a[j * n + k];
                a[j * n + i] -= f * akj;
            }
            let bk = b[k];
            b[i] -= f * bk;
        }
    }
    for k in (0..n).rev() {
        for j in (k + 1)..n {
            let akj = a[j * n + k];
            let xj = b[j];
            b[k] -= akj * xj;
        }
        b[k] /= a[k * n + k];
    }
    Ok(b)
}

const MAGIC: &[u8; 4] = b"ROMD";
const VERSION: u32 = 1;

/// Persist a model: basis, reduced operator, eigenvalues, amplitudes, and
/// modes with complex values stored as interleaved re/im doubles.
pub fn save_dmd(model: &DmdModel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| RomError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| RomError::io(path, e);
    let n = model.state_dim() as u64;
    let r = model.rank() as u64;
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&r.to_le_bytes())?;
        w.write_all(&model.dt.to_le_bytes())?;
        w.write_all(&model.t0.to_le_bytes())?;
        w.write_all(&(model.param.len() as u32).to_le_bytes())?;
        for v in &model.param {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in model.u.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in model.atilde.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        for z in &model.eigenvalues {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        for z in &model.amplitudes {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        for mode in &model.modes {
            for z in mode {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        w.write_all(&model.amplitude_residual.to_le_bytes())?;
        w.flush()
    })()
    .map_err(io)
}

pub fn load_dmd(path: &Path) -> Result<DmdModel> {
    let file = std::fs::File::open(path).map_err(|e| RomError::io(path, e))?;
    let mut r = BufReader::new(file);
    let fmt = |msg: &str| RomError::Format(format!("{}: {msg}", path.display()));

    fn u32_of(r: &mut impl Read) -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64_of(r: &mut impl Read) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64_of(r: &mut impl Read) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn matrix_of(r: &mut impl Read, rows: usize, cols: usize) -> std::io::Result<Matrix> {
        let mut m = Matrix::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m[(i, j)] = f64_of(r)?;
            }
        }
        Ok(m)
    }
    fn complex_of(r: &mut impl Read, count: usize) -> std::io::Result<Vec<Complex64>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let re = f64_of(r)?;
            let im = f64_of(r)?;
            out.push(Complex64::new(re, im));
        }
        Ok(out)
    }

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
    if &magic != MAGIC {
        return Err(fmt("bad magic bytes"));
    }
    let version = u32_of(&mut r).map_err(|_| fmt("truncated"))?;
    if version != VERSION {
        return Err(fmt("unsupported version"));
    }
    let n = u64_of(&mut r).map_err(|_| fmt("truncated"))? as usize;
    let rank = u64_of(&mut r).map_err(|_| fmt("truncated"))? as usize;
    if n == 0 || rank == 0 || (n as u128) * (rank as u128) > (1 << 32) {
        return Err(fmt("degenerate or oversized dimensions"));
    }
    let dt = f64_of(&mut r).map_err(|_| fmt("truncated"))?;
    let t0 = f64_of(&mut r).map_err(|_| fmt("truncated"))?;
    let pdim = u32_of(&mut r).map_err(|_| fmt("truncated"))? as usize;
    let mut param = Vec::with_capacity(pdim);
    for _ in 0..pdim {
        param.push(f64_of(&mut r).map_err(|_| fmt("truncated"))?);
    }
    let u = matrix_of(&mut r, n, rank).map_err(|_| fmt("truncated basis"))?;
    let atilde = matrix_of(&mut r, rank, rank).map_err(|_| fmt("truncated operator"))?;
    let eigenvalues = complex_of(&mut r, rank).map_err(|_| fmt("truncated eigenvalues"))?;
    let amplitudes = complex_of(&mut r, rank).map_err(|_| fmt("truncated amplitudes"))?;
    let mut modes = Vec::with_capacity(rank);
    for _ in 0..rank {
        modes.push(complex_of(&mut r, n).map_err(|_| fmt("truncated modes"))?);
    }
    let amplitude_residual = f64_of(&mut r).map_err(|_| fmt("truncated residual"))?;

    Ok(DmdModel {
        u,
        atilde,
        eigenvalues,
        modes,
        amplitudes,
        dt,
        t0,
        param,
        amplitude_residual,
        notes: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SnapshotMeta;

    fn assert_near(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} differ by more than {tol}");
    }

    fn sequence_from(cols: Vec<Vec<f64>>, dt: f64) -> SnapshotSet {
        let k = cols.len();
        SnapshotSet::new(
            Matrix::from_columns(&cols),
            vec![vec![1.0]; k],
            (0..k).map(|i| i as f64 * dt).collect(),
            SnapshotMeta::default(),
        )
        .unwrap()
    }

    /// Trajectory x_{k+1} = A x_k starting from x0.
    fn linear_trajectory(a: &Matrix, x0: &[f64], steps: usize) -> Vec<Vec<f64>> {
        let mut cols = vec![x0.to_vec()];
        for _ in 1..steps {
            let next = a.matvec(cols.last().unwrap());
            cols.push(next);
        }
        cols
    }

    fn matrix_power_apply(a: &Matrix, x0: &[f64], k: usize) -> Vec<f64> {
        let mut x = x0.to_vec();
        for _ in 0..k {
            x = a.matvec(&x);
        }
        x
    }

    #[test]
    fn constant_sequence_is_a_fixed_point() {
        let v = vec![1.0, -2.0, 0.5];
        let set = sequence_from(vec![v.clone(); 6], 0.1);
        let model = dmd_fit(&set, PodCriterion::EnergyFraction(0.9999)).unwrap();
        assert_eq!(model.rank(), 1);
        assert_near(model.eigenvalues[0].re, 1.0, 1e-10);
        assert_near(model.eigenvalues[0].im, 0.0, 1e-10);
        for k in [0usize, 3, 50] {
            let (state, imag) = dmd_predict(&model, k);
            assert!(imag <= 1e-10);
            for (s, want) in state.iter().zip(&v) {
                assert_near(*s, *want, 1e-10);
            }
        }
    }

    #[test]
    fn known_generator_eigenvalues_recovered() {
        // A = P diag(0.9, 0.5) P^{-1} with a fixed well-conditioned P.
        let p = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let p_inv = Matrix::from_rows(&[&[1.0, -1.0], &[0.0, 1.0]]);
        let a = p.matmul(&Matrix::diag(&[0.9, 0.5])).matmul(&p_inv);
        let cols = linear_trajectory(&a, &[1.0, 2.0], 20);
        let set = sequence_from(cols, 0.05);
        let model = dmd_fit(&set, PodCriterion::Rank(2)).unwrap();
        let mut lams: Vec<f64> = model.eigenvalues.iter().map(|z| z.re).collect();
        lams.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_near(lams[0], 0.9, 1e-8);
        assert_near(lams[1], 0.5, 1e-8);
        for z in &model.eigenvalues {
            assert!(z.im.abs() <= 1e-8);
        }
    }

    #[test]
    fn damped_rotation_gives_conjugate_pair_with_known_modulus() {
        let th = 0.4f64;
        let rho = 0.95f64;
        let a = Matrix::from_rows(&[
            &[rho * th.cos(), -rho * th.sin()],
            &[rho * th.sin(), rho * th.cos()],
        ]);
        let cols = linear_trajectory(&a, &[1.0, 0.0], 25);
        let model = dmd_fit(&sequence_from(cols, 0.1), PodCriterion::Rank(2)).unwrap();
        assert_eq!(model.eigenvalues.len(), 2);
        for z in &model.eigenvalues {
            assert_near(z.norm(), rho, 1e-8);
        }
        let sum_im: f64 = model.eigenvalues.iter().map(|z| z.im).sum();
        assert_near(sum_im, 0.0, 1e-10); // conjugate pair
    }

    #[test]
    fn extrapolation_matches_matrix_power_oracle() {
        let p = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let p_inv = Matrix::from_rows(&[&[1.0, -1.0], &[0.0, 1.0]]);
        let a = p.matmul(&Matrix::diag(&[0.9, 0.5])).matmul(&p_inv);
        let x0 = [1.0, 2.0];
        let cols = linear_trajectory(&a, &x0, 20);
        let model = dmd_fit(&sequence_from(cols, 0.05), PodCriterion::Rank(2)).unwrap();

        let k = 30; // ten steps beyond the training window
        let oracle = matrix_power_apply(&a, &x0, k);
        let (got, _) = dmd_predict(&model, k);
        let scale = norm2(&oracle);
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g - o).abs() <= 1e-6 * scale, "{g} vs {o}");
        }
    }

    #[test]
    fn first_step_matches_amplitude_residual() {
        let a = Matrix::from_rows(&[&[0.8, 0.1], &[0.0, 0.6]]);
        let cols = linear_trajectory(&a, &[1.0, 1.0], 15);
        let x1 = cols[0].clone();
        let model = dmd_fit(&sequence_from(cols, 1.0), PodCriterion::Rank(2)).unwrap();
        assert!(model.amplitude_residual <= 1e-10);
        let (got, _) = dmd_predict(&model, 0);
        for (g, w) in got.iter().zip(&x1) {
            assert_near(*g, *w, 1e-9);
        }
    }

    #[test]
    fn training_reconstruction_error_nonincreasing_in_rank() {
        // Rank-4 linear data embedded in 8 dims.
        let mut gen = Matrix::zeros(8, 8);
        for (i, lam) in [0.95, 0.8, 0.6, 0.3].iter().enumerate() {
            gen[(i, i)] = *lam;
            gen[(i, (i + 1) % 4)] += 0.05;
        }
        // Rotate into a non-axis-aligned subspace.
        let cols = linear_trajectory(&gen, &[1.0, -0.5, 0.3, 0.9, 0.0, 0.0, 0.0, 0.0], 30);
        let set = sequence_from(cols, 0.1);

        let mut prev = f64::INFINITY;
        for r in 1..=4 {
            let model = dmd_fit(&set, PodCriterion::Rank(r)).unwrap();
            let (recon, _) = dmd_reconstruct(&model, set.times()).unwrap();
            let err = recon.matrix().sub(set.matrix()).frobenius_norm()
                / set.matrix().frobenius_norm();
            assert!(err <= prev + 1e-12, "rank {r}: error {err} vs previous {prev}");
            prev = err;
        }
        // Full rank reproduces exactly linear data.
        assert!(prev <= 1e-8, "full-rank reconstruction error {prev}");
    }

    #[test]
    fn reduced_spectrum_matches_lifted_operator() {
        let a = Matrix::from_rows(&[&[0.9, 0.2], &[0.0, 0.7]]);
        // Embed the 2D dynamics into 5 dims with a fixed injection.
        let inj = Matrix::from_rows(&[
            &[1.0, 0.0],
            &[0.5, 1.0],
            &[0.0, 1.0],
            &[-1.0, 0.5],
            &[0.2, 0.2],
        ]);
        let x0_low = [1.0, 1.0];
        let mut cols = Vec::new();
        let mut x = x0_low.to_vec();
        for _ in 0..15 {
            cols.push(inj.matvec(&x));
            x = a.matvec(&x);
        }
        let model = dmd_fit(&sequence_from(cols, 1.0), PodCriterion::Rank(2)).unwrap();

        // Oracle: eigenvalues of the lifted 5x5 operator; its nonzero part
        // must agree with the reduced spectrum.
        let lifted = model.lift_operator();
        let full = eig_real(&lifted).unwrap();
        let mut nonzero: Vec<Complex64> =
            full.values.into_iter().filter(|z| z.norm() > 1e-10).collect();
        assert_eq!(nonzero.len(), 2);
        for lam in &model.eigenvalues {
            let (best, _) = nonzero
                .iter()
                .enumerate()
                .min_by(|(_, x), (_, y)| (*x - lam).norm().partial_cmp(&(*y - lam).norm()).unwrap())
                .unwrap();
            assert!((nonzero[best] - lam).norm() <= 1e-8);
            nonzero.remove(best);
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let one = sequence_from(vec![vec![1.0, 2.0]], 0.1);
        assert!(dmd_fit(&one, PodCriterion::Rank(1)).is_err());

        // Non-uniform time stamps.
        let mut set = sequence_from(vec![vec![1.0], vec![2.0], vec![3.0]], 0.1);
        set = SnapshotSet::new(
            set.matrix().clone(),
            set.params().to_vec(),
            vec![0.0, 0.1, 0.35],
            SnapshotMeta::default(),
        )
        .unwrap();
        assert!(dmd_fit(&set, PodCriterion::Rank(1)).is_err());

        // Two distinct parameters in one "sequence".
        let mixed = SnapshotSet::new(
            Matrix::from_columns(&[vec![1.0], vec![2.0]]),
            vec![vec![1.0], vec![2.0]],
            vec![0.0, 0.1],
            SnapshotMeta::default(),
        )
        .unwrap();
        assert!(dmd_fit(&mixed, PodCriterion::Rank(1)).is_err());
    }

    #[test]
    fn reconstruct_rejects_off_grid_times() {
        let a = Matrix::from_rows(&[&[0.9, 0.0], &[0.0, 0.5]]);
        let cols = linear_trajectory(&a, &[1.0, 1.0], 10);
        let model = dmd_fit(&sequence_from(cols, 0.5), PodCriterion::Rank(2)).unwrap();
        assert!(dmd_reconstruct(&model, &[0.0, 0.5, 0.7]).is_err());
        assert!(dmd_reconstruct(&model, &[-0.5]).is_err());
        let (set, imag) = dmd_reconstruct(&model, &[0.0, 0.5, 1.0, 5.0]).unwrap();
        assert_eq!(set.len(), 4);
        assert!(imag <= 1e-9);
    }

    #[test]
    fn model_file_round_trip_preserves_predictions() {
        let a = Matrix::from_rows(&[&[0.9, 0.3], &[-0.1, 0.6]]);
        let cols = linear_trajectory(&a, &[1.0, -1.0], 12);
        let model = dmd_fit(&sequence_from(cols, 0.25), PodCriterion::Rank(2)).unwrap();
        let dir = std::env::temp_dir().join("romkit_dmd_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.romd");
        save_dmd(&model, &path).unwrap();
        let back = load_dmd(&path).unwrap();
        assert_eq!(back.u, model.u);
        assert_eq!(back.atilde, model.atilde);
        assert_eq!(back.dt, model.dt);
        assert_eq!(back.param, model.param);
        for k in [0usize, 5, 17] {
            let (x, _) = dmd_predict(&model, k);
            let (y, _) = dmd_predict(&back, k);
            assert_eq!(x, y);
        }
    }
}
