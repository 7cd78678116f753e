//! Linear dimensionality reduction: orthogonal mode bases extracted from
//! snapshot databases (POD) and active-subspace reduction of parameter
//! spaces driven by gradient samples.

use crate::dataset::{
    load_snapshots, normalize_fit, save_snapshots, NormalizeMode, Normalizer, SnapshotFormat,
    SnapshotMeta, SnapshotSet,
};
use crate::error::{Result, RomError};
use crate::numerics::{svd, Matrix};
use std::path::Path;

/// Orthonormal spatial modes with their singular-value energies.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    /// dof × N_rb, orthonormal columns, strongest mode first.
    pub modes: Matrix,
    /// Singular values of the snapshot matrix, one per retained mode.
    pub energies: Vec<f64>,
    /// Normalization that was applied to the snapshots before the fit, if
    /// any; consumers must apply/invert it around project/lift themselves.
    pub normalizer: Option<Normalizer>,
}

/// How many modes to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PodCriterion {
    /// Exactly this many modes (capped at the numerical rank).
    Rank(usize),
    /// Smallest r with sum_{i<=r} sigma_i^2 >= eta * sum sigma_i^2.
    EnergyFraction(f64),
}

impl ReducedBasis {
    pub fn n_rb(&self) -> usize {
        self.modes.cols()
    }

    pub fn dof(&self) -> usize {
        self.modes.rows()
    }
}

/// Fit an orthonormal basis to the snapshot columns via SVD. Snapshots are
/// used as stored: no centering (pass a mode to [`pod_fit_normalized`] to
/// center and/or scale first).
pub fn pod_fit(set: &SnapshotSet, criterion: PodCriterion) -> Result<ReducedBasis> {
    pod_from_matrix(set.matrix(), criterion, None)
}

/// Like [`pod_fit`] but normalizes the snapshots first and records the
/// fitted normalizer on the basis.
pub fn pod_fit_normalized(
    set: &SnapshotSet,
    criterion: PodCriterion,
    mode: NormalizeMode,
) -> Result<ReducedBasis> {
    let norm = normalize_fit(set, mode);
    let transformed = norm.apply_matrix(set.matrix())?;
    pod_from_matrix(&transformed, criterion, Some(norm))
}

fn pod_from_matrix(
    snapshots: &Matrix,
    criterion: PodCriterion,
    normalizer: Option<Normalizer>,
) -> Result<ReducedBasis> {
    let (cap, eta) = match criterion {
        PodCriterion::Rank(r) => {
            if r == 0 {
                return Err(RomError::Invalid("pod_fit: requested rank must be at least 1".into()));
            }
            (Some(r), 1.0)
        }
        PodCriterion::EnergyFraction(eta) => {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(RomError::Invalid(format!(
                    "pod_fit: energy fraction {eta} must lie in (0, 1]"
                )));
            }
            (None, eta)
        }
    };

    let decomp = svd(snapshots, cap, None)?;
    let r = match criterion {
        PodCriterion::Rank(_) => decomp.rank(),
        PodCriterion::EnergyFraction(_) => {
            let total: f64 = decomp.sigma.iter().map(|s| s * s).sum();
            let mut cum = 0.0;
            let mut r = decomp.rank();
            for (i, s) in decomp.sigma.iter().enumerate() {
                cum += s * s;
                if cum >= eta * total {
                    r = i + 1;
                    break;
                }
            }
            r
        }
    };

    Ok(ReducedBasis {
        modes: decomp.u.submatrix_cols(0, r),
        energies: decomp.sigma[..r].to_vec(),
        normalizer,
    })
}

/// Coefficients of `state` in the mode basis: `modesᵀ · state`.
pub fn pod_project(basis: &ReducedBasis, state: &[f64]) -> Result<Vec<f64>> {
    if state.len() != basis.dof() {
        return Err(RomError::Shape(format!(
            "pod_project: state length {} does not match basis dof {}",
            state.len(),
            basis.dof()
        )));
    }
    Ok(basis.modes.transpose_matvec(state))
}

/// Reconstruct a full state from mode coefficients: `modes · coeffs`.
pub fn pod_lift(basis: &ReducedBasis, coeffs: &[f64]) -> Result<Vec<f64>> {
    if coeffs.len() != basis.n_rb() {
        return Err(RomError::Shape(format!(
            "pod_lift: {} coefficients for a basis with {} modes",
            coeffs.len(),
            basis.n_rb()
        )));
    }
    Ok(basis.modes.matvec(coeffs))
}

/// Persist a basis in the snapshot container: one mode per column, the
/// mode's energy as its parameter, the mode index as its time stamp. The
/// normalizer is *not* stored here; pipeline configuration records it.
pub fn save_basis(basis: &ReducedBasis, path: &Path) -> Result<()> {
    let params: Vec<Vec<f64>> = basis.energies.iter().map(|&e| vec![e]).collect();
    let times: Vec<f64> = (0..basis.n_rb()).map(|i| i as f64).collect();
    let meta = SnapshotMeta { field: "reduced-basis".into(), provenance: "pod".into() };
    let set = SnapshotSet::new(basis.modes.clone(), params, times, meta)?;
    save_snapshots(&set, path, SnapshotFormat::Binary)
}

pub fn load_basis(path: &Path) -> Result<ReducedBasis> {
    let set = load_snapshots(path, SnapshotFormat::Binary)?;
    if set.meta.field != "reduced-basis" {
        return Err(RomError::Format(format!(
            "{}: file holds '{}' snapshots, not a reduced basis",
            path.display(),
            set.meta.field
        )));
    }
    let energies: Vec<f64> = set.params().iter().map(|p| p[0]).collect();
    Ok(ReducedBasis { modes: set.matrix().clone(), energies, normalizer: None })
}

/// Dominant directions of a scalar function over its input space, estimated
/// from gradient samples: the leading eigenvectors of
/// `C = (1/N) sum_i g_i g_iᵀ`.
#[derive(Debug, Clone)]
pub struct ActiveSubspace {
    /// m × k, orthonormal columns.
    pub w: Matrix,
    /// Full spectrum of C, nonincreasing, clamped at zero (C is positive
    /// semidefinite; tiny negative roundoff is truncated).
    pub eigenvalues: Vec<f64>,
}

impl ActiveSubspace {
    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn k(&self) -> usize {
        self.w.cols()
    }
}

/// Build the active subspace from gradient samples (each of length m). For a
/// vector-valued map, pass the Jacobian rows as individual samples; the
/// outer-product sum is the same up to the 1/N normalization, which does not
/// change eigenvectors or eigenvalue ratios.
pub fn as_fit(gradients: &[Vec<f64>], k: usize) -> Result<ActiveSubspace> {
    if gradients.is_empty() {
        return Err(RomError::Invalid("as_fit: need at least one gradient sample".into()));
    }
    let m = gradients[0].len();
    if m == 0 {
        return Err(RomError::Invalid("as_fit: gradients must be non-empty vectors".into()));
    }
    if k == 0 || k > m {
        return Err(RomError::Invalid(format!("as_fit: k = {k} must lie in 1..={m}")));
    }
    if gradients.iter().any(|g| g.len() != m) {
        return Err(RomError::Shape("as_fit: ragged gradient samples".into()));
    }
    if gradients.iter().flatten().any(|v| !v.is_finite()) {
        return Err(RomError::NonFinite("as_fit: gradients contain NaN or infinity".into()));
    }

    let n = gradients.len() as f64;
    let mut c = Matrix::zeros(m, m);
    for g in gradients {
        for j in 0..m {
            if g[j] == 0.0 {
                continue;
            }
            for i in 0..m {
                c[(i, j)] += g[i] * g[j] / n;
            }
        }
    }

    let eig = crate::numerics::eig_sym(&c)?;
    let eigenvalues: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    Ok(ActiveSubspace { w: eig.vectors.submatrix_cols(0, k), eigenvalues })
}

/// Reduced coordinates `z = Wᵀ x`.
pub fn as_project(subspace: &ActiveSubspace, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != subspace.input_dim() {
        return Err(RomError::Shape(format!(
            "as_project: input length {} does not match subspace dim {}",
            x.len(),
            subspace.input_dim()
        )));
    }
    Ok(subspace.w.transpose_matvec(x))
}

/// Central finite-difference gradient for black-box scalar functions, with
/// per-coordinate step `h_i = 1e-5 * (1 + |x_i|)`.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}
