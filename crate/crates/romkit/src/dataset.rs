//! Parameter sampling, snapshot databases, train/test splitting,
//! normalization, and snapshot file I/O.
//!
//! A snapshot database stores one state vector per column (dof × K). Columns
//! carry their parameter vector and time stamp so downstream consumers can
//! group by parameter (time series) or treat every column independently
//! (steady problems).

use crate::error::{Result, RomError};
use crate::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Box-shaped parameter domain with per-dimension names.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub labels: Vec<String>,
}

impl ParameterSpace {
    /// Create a space with default labels `mu_1..mu_p`.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let labels = (1..=lower.len()).map(|i| format!("mu_{i}")).collect();
        ParameterSpace::with_labels(lower, upper, labels)
    }

    pub fn with_labels(lower: Vec<f64>, upper: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if lower.is_empty() {
            return Err(RomError::Invalid("parameter space needs at least one dimension".into()));
        }
        if lower.len() != upper.len() || lower.len() != labels.len() {
            return Err(RomError::Shape(format!(
                "parameter space: lower/upper/labels lengths {}/{}/{} differ",
                lower.len(),
                upper.len(),
                labels.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(RomError::NonFinite(format!("parameter space bound {i} is not finite")));
            }
            if lo >= hi {
                return Err(RomError::Invalid(format!(
                    "parameter space dimension {i}: lower {lo} must be below upper {hi}"
                )));
            }
        }
        Ok(ParameterSpace { lower, upper, labels })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (lo, hi))| x >= lo && x <= hi)
    }
}

/// How to draw parameter samples.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanKind {
    /// Independent uniform draws per dimension.
    Uniform,
    /// Normal draws, rejected and redrawn until they land inside the space.
    Normal { center: Vec<f64>, spread: Vec<f64> },
    /// Evenly spaced grid including both endpoints. For multi-dimensional
    /// spaces the count must be a perfect power `m^dim`; the grid is the
    /// Cartesian product of per-dimension grids with m points, last
    /// dimension varying fastest.
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub kind: PlanKind,
    pub count: usize,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn uniform(count: usize, seed: u64) -> Self {
        SamplingPlan { kind: PlanKind::Uniform, count, seed }
    }

    pub fn grid(count: usize) -> Self {
        SamplingPlan { kind: PlanKind::Grid, count, seed: 0 }
    }

    pub fn normal(count: usize, seed: u64, center: Vec<f64>, spread: Vec<f64>) -> Self {
        SamplingPlan { kind: PlanKind::Normal { center, spread }, count, seed }
    }
}

/// Draw `plan.count` parameter vectors from `space`. Deterministic given the
/// plan seed; grids ignore the seed entirely.
pub fn sample(space: &ParameterSpace, plan: &SamplingPlan) -> Result<Vec<Vec<f64>>> {
    if plan.count == 0 {
        return Err(RomError::Invalid("sampling plan count must be at least 1".into()));
    }
    let dim = space.dim();
    match &plan.kind {
        PlanKind::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            let mut out = Vec::with_capacity(plan.count);
            for _ in 0..plan.count {
                let p: Vec<f64> =
                    (0..dim).map(|d| rng.gen_range(space.lower[d]..space.upper[d])).collect();
                out.push(p);
            }
            Ok(out)
        }
        PlanKind::Normal { center, spread } => {
            if center.len() != dim || spread.len() != dim {
                return Err(RomError::Shape(format!(
                    "normal plan: center/spread dims {}/{} do not match space dim {dim}",
                    center.len(),
                    spread.len()
                )));
            }
            if spread.iter().any(|s| *s <= 0.0) {
                return Err(RomError::Invalid("normal plan: spread entries must be > 0".into()));
            }
            let dists: Vec<Normal<f64>> = center
                .iter()
                .zip(spread)
                .map(|(&c, &s)| Normal::new(c, s).expect("spread checked positive"))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            let mut out = Vec::with_capacity(plan.count);
            let mut draws: u64 = 0;
            while out.len() < plan.count {
                let p: Vec<f64> = dists.iter().map(|d| d.sample(&mut rng)).collect();
                draws += 1;
                if space.contains(&p) {
                    out.push(p);
                } else if draws >= 1_000_000 && out.is_empty() {
                    return Err(RomError::Invalid(
                        "normal plan: no sample landed inside the parameter space after 1e6 draws"
                            .into(),
                    ));
                }
            }
            Ok(out)
        }
        PlanKind::Grid => {
            let per_dim = if dim == 1 {
                plan.count
            } else {
                let m = (plan.count as f64).powf(1.0 / dim as f64).round() as usize;
                if m.pow(dim as u32) != plan.count {
                    return Err(RomError::Invalid(format!(
                        "grid plan: count {} is not a perfect power m^{dim}",
                        plan.count
                    )));
                }
                m
            };
            let axes: Vec<Vec<f64>> =
                (0..dim).map(|d| linspace(space.lower[d], space.upper[d], per_dim)).collect();
            let mut out = Vec::with_capacity(plan.count);
            let mut idx = vec![0usize; dim];
            loop {
                out.push((0..dim).map(|d| axes[d][idx[d]]).collect());
                // Advance the mixed-radix counter, last dimension fastest.
                let mut d = dim;
                loop {
                    if d == 0 {
                        return Ok(out);
                    }
                    d -= 1;
                    idx[d] += 1;
                    if idx[d] < per_dim {
                        break;
                    }
                    idx[d] = 0;
                }
            }
        }
    }
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (count - 1) as f64;
    (0..count).map(|i| if i == count - 1 { hi } else { lo + step * i as f64 }).collect()
}

/// Free-text description of where a snapshot set came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SnapshotMeta {
    /// Name of the physical field stored in the columns (e.g. "velocity").
    pub field: String,
    /// Producing solver and its configuration digest.
    pub provenance: String,
}

impl SnapshotMeta {
    fn encode(&self) -> String {
        serde_json::json!({ "field": self.field, "provenance": self.provenance }).to_string()
    }

    fn decode(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)
            .map_err(|e| RomError::Format(format!("snapshot metadata is not valid JSON: {e}")))?;
        Ok(SnapshotMeta {
            field: v.get("field").and_then(|x| x.as_str()).unwrap_or_default().to_string(),
            provenance: v.get("provenance").and_then(|x| x.as_str()).unwrap_or_default().to_string(),
        })
    }
}

/// Immutable snapshot database: one state vector per column, with the
/// parameter vector and time stamp that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    snapshots: Matrix,
    params: Vec<Vec<f64>>,
    times: Vec<f64>,
    pub meta: SnapshotMeta,
}

impl SnapshotSet {
    pub fn new(
        snapshots: Matrix,
        params: Vec<Vec<f64>>,
        times: Vec<f64>,
        meta: SnapshotMeta,
    ) -> Result<Self> {
        let k = snapshots.cols();
        if params.len() != k || times.len() != k {
            return Err(RomError::Shape(format!(
                "snapshot set: {k} columns but {} parameter vectors and {} time stamps",
                params.len(),
                times.len()
            )));
        }
        let pdim = params[0].len();
        if pdim == 0 {
            return Err(RomError::Invalid("snapshot set: parameter vectors must be non-empty".into()));
        }
        if params.iter().any(|p| p.len() != pdim) {
            return Err(RomError::Shape("snapshot set: ragged parameter vectors".into()));
        }
        snapshots.ensure_finite("snapshot set")?;
        if params.iter().flatten().any(|v| !v.is_finite()) || times.iter().any(|t| !t.is_finite()) {
            return Err(RomError::NonFinite("snapshot set: parameters/times must be finite".into()));
        }
        Ok(SnapshotSet { snapshots, params, times, meta })
    }

    pub fn dof(&self) -> usize {
        self.snapshots.rows()
    }

    /// Number of snapshots (columns).
    pub fn len(&self) -> usize {
        self.snapshots.cols()
    }

    pub fn is_empty(&self) -> bool {
        false // a constructed set always has at least one column
    }

    pub fn param_dim(&self) -> usize {
        self.params[0].len()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.snapshots
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshot(&self, k: usize) -> &[f64] {
        self.snapshots.col(k)
    }

    /// Check every column's parameter vector against a declared space.
    pub fn check_within(&self, space: &ParameterSpace) -> Result<()> {
        for (k, p) in self.params.iter().enumerate() {
            if !space.contains(p) {
                return Err(RomError::Invalid(format!(
                    "snapshot column {k}: parameter {p:?} outside declared space"
                )));
            }
        }
        Ok(())
    }

    /// Group column indices by distinct parameter vector, in order of first
    /// appearance. Time series share a parameter across many columns.
    pub fn group_by_param(&self) -> Vec<(Vec<f64>, Vec<usize>)> {
        let mut groups: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
        for (k, p) in self.params.iter().enumerate() {
            match groups.iter_mut().find(|(gp, _)| gp == p) {
                Some((_, idx)) => idx.push(k),
                None => groups.push((p.clone(), vec![k])),
            }
        }
        groups
    }

    /// New set holding the given columns (in the given order).
    pub fn select_columns(&self, cols: &[usize]) -> Result<SnapshotSet> {
        if cols.is_empty() {
            return Err(RomError::Invalid("select_columns: empty selection".into()));
        }
        let mut m = Matrix::zeros(self.dof(), cols.len());
        let mut params = Vec::with_capacity(cols.len());
        let mut times = Vec::with_capacity(cols.len());
        for (dst, &src) in cols.iter().enumerate() {
            if src >= self.len() {
                return Err(RomError::Shape(format!(
                    "select_columns: index {src} out of range for {} columns",
                    self.len()
                )));
            }
            m.col_mut(dst).copy_from_slice(self.snapshots.col(src));
            params.push(self.params[src].clone());
            times.push(self.times[src]);
        }
        SnapshotSet::new(m, params, times, self.meta.clone())
    }
}

/// Partition a snapshot set by parameter value: every column of a given
/// parameter lands on the same side. `fraction` is the share of distinct
/// parameters assigned to the training side (rounded, both sides kept
/// non-empty). Deterministic given the seed.
pub fn split_train_test(
    set: &SnapshotSet,
    fraction: f64,
    seed: u64,
) -> Result<(SnapshotSet, SnapshotSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(RomError::Invalid(format!("split fraction {fraction} must lie strictly in (0, 1)")));
    }
    let groups = set.group_by_param();
    let n = groups.len();
    if n < 2 {
        return Err(RomError::Invalid(format!(
            "split needs at least 2 distinct parameters, found {n}"
        )));
    }
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates so the choice of held-out parameters is unbiased.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let train_groups: Vec<usize> = order[..n_train].to_vec();

    let mut train_cols = Vec::new();
    let mut test_cols = Vec::new();
    for (gi, (_, cols)) in groups.iter().enumerate() {
        if train_groups.contains(&gi) {
            train_cols.extend_from_slice(cols);
        } else {
            test_cols.extend_from_slice(cols);
        }
    }
    train_cols.sort_unstable();
    test_cols.sort_unstable();
    Ok((set.select_columns(&train_cols)?, set.select_columns(&test_cols)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeMode {
    None,
    MeanCenter,
    CenterAndScale,
}

/// Affine per-dof transform fitted on training data:
/// `apply(x) = (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mode: NormalizeMode,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Fit shift/scale on a training set. Center uses the per-dof mean; scale
/// uses the per-dof standard deviation with constant rows pinned to 1 so the
/// transform stays invertible.
pub fn normalize_fit(set: &SnapshotSet, mode: NormalizeMode) -> Normalizer {
    let dof = set.dof();
    let k = set.len() as f64;
    let mut shift = vec![0.0; dof];
    let mut scale = vec![1.0; dof];
    if mode == NormalizeMode::None {
        return Normalizer { mode, shift, scale };
    }
    for col in 0..set.len() {
        for (i, v) in set.snapshot(col).iter().enumerate() {
            shift[i] += v;
        }
    }
    for s in shift.iter_mut() {
        *s /= k;
    }
    if mode == NormalizeMode::CenterAndScale {
        let mut var = vec![0.0; dof];
        for col in 0..set.len() {
            for (i, v) in set.snapshot(col).iter().enumerate() {
                let d = v - shift[i];
                var[i] += d * d;
            }
        }
        for (i, v) in var.iter().enumerate() {
            let sd = (v / k).sqrt();
            scale[i] = if sd > 1e-300 { sd } else { 1.0 };
        }
    }
    Normalizer { mode, shift, scale }
}

impl Normalizer {
    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        Ok(x.iter().enumerate().map(|(i, v)| (v - self.shift[i]) / self.scale[i]).collect())
    }

    pub fn invert_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        Ok(x.iter().enumerate().map(|(i, v)| v * self.scale[i] + self.shift[i]).collect())
    }

    pub fn apply_matrix(&self, m: &Matrix) -> Result<Matrix> {
        self.check_len(m.rows())?;
        Ok(Matrix::from_fn(m.rows(), m.cols(), |i, j| (m[(i, j)] - self.shift[i]) / self.scale[i]))
    }

    pub fn invert_matrix(&self, m: &Matrix) -> Result<Matrix> {
        self.check_len(m.rows())?;
        Ok(Matrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * self.scale[i] + self.shift[i]))
    }

    pub fn apply_set(&self, set: &SnapshotSet) -> Result<SnapshotSet> {
        SnapshotSet::new(
            self.apply_matrix(set.matrix())?,
            set.params().to_vec(),
            set.times().to_vec(),
            set.meta.clone(),
        )
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.shift.len() {
            return Err(RomError::Shape(format!(
                "normalizer fitted on {} dofs, input has {n}",
                self.shift.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotFormat {
    Binary,
    Csv,
}

const MAGIC: &[u8; 4] = b"ROMS";
const VERSION: u32 = 1;

/// Write a snapshot set. Binary files round-trip bit-exact; CSV stores 17
/// significant digits per value.
pub fn save_snapshots(set: &SnapshotSet, path: &Path, format: SnapshotFormat) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| RomError::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        SnapshotFormat::Binary => write_binary(set, &mut w),
        SnapshotFormat::Csv => write_csv(set, &mut w),
    }
    .map_err(|e| RomError::io(path, e))
}

pub fn load_snapshots(path: &Path, format: SnapshotFormat) -> Result<SnapshotSet> {
    let file = std::fs::File::open(path).map_err(|e| RomError::io(path, e))?;
    let mut r = BufReader::new(file);
    match format {
        SnapshotFormat::Binary => read_binary(&mut r, path),
        SnapshotFormat::Csv => read_csv(&mut r, path),
    }
}

fn write_binary(set: &SnapshotSet, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(set.dof() as u64).to_le_bytes())?;
    w.write_all(&(set.len() as u64).to_le_bytes())?;
    w.write_all(&(set.param_dim() as u32).to_le_bytes())?;
    for p in set.params() {
        for v in p {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for t in set.times() {
        w.write_all(&t.to_le_bytes())?;
    }
    w.write_all(bytemuck_f64s(set.matrix().as_slice()))?;
    let meta = set.meta.encode();
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    w.flush()
}

/// View a f64 slice as little-endian bytes. On big-endian targets this would
/// need a byte swap; the toolchain here only targets little-endian.
fn bytemuck_f64s(v: &[f64]) -> &[u8] {
    debug_assert_eq!(1.0f64.to_le_bytes(), 1.0f64.to_ne_bytes());
    unsafe { std::slice::from_raw_parts(v.as_ptr() as *const u8, v.len() * 8) }
}

fn read_binary(r: &mut impl Read, path: &Path) -> Result<SnapshotSet> {
    let fmt = |msg: String| RomError::Format(format!("{}: {msg}", path.display()));
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(fmt(format!("bad magic bytes {magic:?}, expected {MAGIC:?}")));
    }
    let version = read_u32(r, path)?;
    if version != VERSION {
        return Err(fmt(format!("unsupported version {version}, expected {VERSION}")));
    }
    let dof = read_u64(r, path)? as usize;
    let k = read_u64(r, path)? as usize;
    let pdim = read_u32(r, path)? as usize;
    if dof == 0 || k == 0 || pdim == 0 {
        return Err(fmt(format!("degenerate dimensions dof={dof} K={k} param_dim={pdim}")));
    }
    // Refuse absurd headers before allocating.
    let total = (dof as u128) * (k as u128) + (k as u128) * (pdim as u128 + 1);
    if total > (1u128 << 33) {
        return Err(fmt(format!("header implies {total} values; refusing to allocate")));
    }

    let mut params = Vec::with_capacity(k);
    for _ in 0..k {
        let mut p = Vec::with_capacity(pdim);
        for _ in 0..pdim {
            p.push(read_f64(r, path)?);
        }
        params.push(p);
    }
    let mut times = Vec::with_capacity(k);
    for _ in 0..k {
        times.push(read_f64(r, path)?);
    }
    let mut m = Matrix::zeros(dof, k);
    for j in 0..k {
        for i in 0..dof {
            m[(i, j)] = read_f64(r, path)?;
        }
    }
    let meta_len = read_u64(r, path)? as usize;
    if meta_len > (1 << 24) {
        return Err(fmt(format!("metadata length {meta_len} exceeds 16 MiB limit")));
    }
    let mut meta_bytes = vec![0u8; meta_len];
    read_exact(r, &mut meta_bytes, path)?;
    let meta_str = String::from_utf8(meta_bytes)
        .map_err(|_| fmt("metadata is not valid UTF-8".into()))?;
    let meta = SnapshotMeta::decode(&meta_str)?;
    SnapshotSet::new(m, params, times, meta)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|_| {
        RomError::Format(format!("{}: truncated file (needed {} more bytes)", path.display(), buf.len()))
    })
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, path)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, path: &Path) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, path)?;
    Ok(f64::from_le_bytes(b))
}

fn write_csv(set: &SnapshotSet, w: &mut impl Write) -> std::io::Result<()> {
    write!(w, "t")?;
    for i in 1..=set.param_dim() {
        write!(w, ",mu_{i}")?;
    }
    for i in 1..=set.dof() {
        write!(w, ",dof_{i}")?;
    }
    writeln!(w)?;
    for k in 0..set.len() {
        write!(w, "{:.16e}", set.times()[k])?;
        for v in &set.params()[k] {
            write!(w, ",{v:.16e}")?;
        }
        for v in set.snapshot(k) {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

fn read_csv(r: &mut impl BufRead, path: &Path) -> Result<SnapshotSet> {
    let fmt = |msg: String| RomError::Format(format!("{}: {msg}", path.display()));
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(RomError::io(path, e)),
        None => return Err(fmt("empty file".into())),
    };
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.first() != Some(&"t") {
        return Err(fmt(format!("header must start with 't', got {:?}", cols.first())));
    }
    let pdim = cols.iter().skip(1).take_while(|c| c.starts_with("mu_")).count();
    let dof = cols.len() - 1 - pdim;
    if pdim == 0 || dof == 0 {
        return Err(fmt(format!("header declares {pdim} parameters and {dof} dofs")));
    }
    if !cols[1 + pdim..].iter().all(|c| c.starts_with("dof_")) {
        return Err(fmt("header mixes mu_/dof_ columns out of order".into()));
    }

    let mut params = Vec::new();
    let mut times = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| RomError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != cols.len() {
            return Err(fmt(format!(
                "row {}: {} fields, header has {}",
                lineno + 2,
                fields.len(),
                cols.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| fmt(format!("row {}: bad number '{s}'", lineno + 2)))
        };
        times.push(parse(fields[0])?);
        let p: Result<Vec<f64>> = fields[1..1 + pdim].iter().map(|s| parse(s)).collect();
        params.push(p?);
        let v: Result<Vec<f64>> = fields[1 + pdim..].iter().map(|s| parse(s)).collect();
        columns.push(v?);
    }
    if columns.is_empty() {
        return Err(fmt("no data rows".into()));
    }
    let m = Matrix::from_columns(&columns);
    SnapshotSet::new(m, params, times, SnapshotMeta::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_space(dim: usize) -> ParameterSpace {
        ParameterSpace::new(vec![0.0; dim], vec![1.0; dim]).unwrap()
    }

    fn toy_set(dof: usize, params: &[f64], steps: usize) -> SnapshotSet {
        // One time series per parameter value.
        let mut cols = Vec::new();
        let mut ps = Vec::new();
        let mut ts = Vec::new();
        for &p in params {
            for s in 0..steps {
                cols.push((0..dof).map(|i| p * (i + 1) as f64 + s as f64 * 0.1).collect());
                ps.push(vec![p]);
                ts.push(s as f64 * 0.1);
            }
        }
        SnapshotSet::new(Matrix::from_columns(&cols), ps, ts, SnapshotMeta::default()).unwrap()
    }

    #[test]
    fn uniform_sampling_is_deterministic_and_bounded() {
        let space = unit_space(2);
        let plan = SamplingPlan::uniform(3, 7);
        let a = sample(&space, &plan).unwrap();
        let b = sample(&space, &plan).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for p in &a {
            assert!(space.contains(p));
        }
    }

    #[test]
    fn grid_matches_linspace_endpoints() {
        let space = ParameterSpace::new(vec![0.001], vec![0.01]).unwrap();
        let got = sample(&space, &SamplingPlan::grid(5)).unwrap();
        let want = [0.001, 0.00325, 0.0055, 0.00775, 0.01];
        assert_eq!(got.len(), 5);
        for (g, w) in got.iter().zip(want) {
            assert!((g[0] - w).abs() <= 1e-15, "{} vs {w}", g[0]);
        }
        assert_eq!(got[0][0], 0.001);
        assert_eq!(got[4][0], 0.01);
    }

    #[test]
    fn grid_in_two_dims_needs_perfect_square() {
        let space = unit_space(2);
        assert!(sample(&space, &SamplingPlan::grid(5)).is_err());
        let got = sample(&space, &SamplingPlan::grid(9)).unwrap();
        assert_eq!(got.len(), 9);
        assert_eq!(got[0], vec![0.0, 0.0]);
        assert_eq!(got[1], vec![0.0, 0.5]); // last dimension fastest
        assert_eq!(got[8], vec![1.0, 1.0]);
    }

    #[test]
    fn truncated_normal_mean_stays_near_center() {
        let space = ParameterSpace::new(vec![-0.4], vec![0.4]).unwrap();
        let plan = SamplingPlan::normal(10_000, 11, vec![0.0], vec![0.2]);
        let got = sample(&space, &plan).unwrap();
        let mean: f64 = got.iter().map(|p| p[0]).sum::<f64>() / got.len() as f64;
        // 3 sigma/sqrt(n) envelope for the sample mean.
        assert!(mean.abs() <= 3.0 * 0.2 / (10_000f64).sqrt(), "mean {mean}");
        assert!(got.iter().all(|p| space.contains(p)));
    }

    #[test]
    fn hopeless_normal_plan_is_reported() {
        let space = unit_space(1);
        let plan = SamplingPlan::normal(1, 3, vec![100.0], vec![1e-9]);
        assert!(matches!(sample(&space, &plan), Err(RomError::Invalid(_))));
    }

    #[test]
    fn split_counts_follow_fraction() {
        let set = toy_set(3, &(1..=10).map(|i| i as f64).collect::<Vec<_>>(), 1);
        let (train, test) = split_train_test(&set, 0.8, 1).unwrap();
        assert_eq!(train.group_by_param().len(), 8);
        assert_eq!(test.group_by_param().len(), 2);

        let set2 = toy_set(3, &[1.0, 2.0], 1);
        let (tr2, te2) = split_train_test(&set2, 0.5, 1).unwrap();
        assert_eq!(tr2.len(), 1);
        assert_eq!(te2.len(), 1);
    }

    #[test]
    fn split_keeps_time_series_together() {
        let set = toy_set(2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 100);
        let (train, test) = split_train_test(&set, 2.0 / 3.0, 5).unwrap();
        assert_eq!(train.group_by_param().len(), 4);
        assert_eq!(train.len(), 400);
        assert_eq!(test.len(), 200);
        // No parameter on both sides.
        for (p, _) in train.group_by_param() {
            assert!(!test.group_by_param().iter().any(|(q, _)| *q == p));
        }
    }

    #[test]
    fn split_rejects_single_parameter() {
        let set = toy_set(2, &[1.0], 10);
        assert!(split_train_test(&set, 0.5, 0).is_err());
    }

    #[test]
    fn constant_columns_center_to_zero() {
        let cols = vec![vec![2.0, 5.0], vec![2.0, 5.0], vec![2.0, 5.0]];
        let set = SnapshotSet::new(
            Matrix::from_columns(&cols),
            vec![vec![1.0], vec![2.0], vec![3.0]],
            vec![0.0; 3],
            SnapshotMeta::default(),
        )
        .unwrap();
        let norm = normalize_fit(&set, NormalizeMode::CenterAndScale);
        let centered = norm.apply_set(&set).unwrap();
        assert!(centered.matrix().max_abs() <= 1e-15);
        // Constant rows keep unit scale so inversion works.
        assert!(norm.scale.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn mode_none_is_identity() {
        let set = toy_set(4, &[1.0, 2.0], 3);
        let norm = normalize_fit(&set, NormalizeMode::None);
        let out = norm.apply_set(&set).unwrap();
        assert_eq!(out.matrix(), set.matrix());
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let set = toy_set(5, &[0.3, 0.7, 1.9], 4);
        let dir = std::env::temp_dir().join("romkit_dataset_test_bin");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("set.roms");
        save_snapshots(&set, &path, SnapshotFormat::Binary).unwrap();
        let back = load_snapshots(&path, SnapshotFormat::Binary).unwrap();
        assert_eq!(back.matrix(), set.matrix());
        assert_eq!(back.params(), set.params());
        assert_eq!(back.times(), set.times());
        assert_eq!(back.meta, set.meta);
    }

    #[test]
    fn csv_round_trip_is_exact_at_17_digits() {
        let set = toy_set(6, &[0.123456789012345, 0.9], 3);
        let dir = std::env::temp_dir().join("romkit_dataset_test_csv");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("set.csv");
        save_snapshots(&set, &path, SnapshotFormat::Csv).unwrap();
        let back = load_snapshots(&path, SnapshotFormat::Csv).unwrap();
        let scale = set.matrix().max_abs();
        let diff = back.matrix().sub(set.matrix()).max_abs();
        assert!(diff <= 1e-15 * scale, "round-trip diff {diff}");
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let dir = std::env::temp_dir().join("romkit_dataset_test_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.roms");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_snapshots(&path, SnapshotFormat::Binary), Err(RomError::Format(_))));

        let set = toy_set(3, &[1.0, 2.0], 2);
        let good = dir.join("good.roms");
        save_snapshots(&set, &good, SnapshotFormat::Binary).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = dir.join("cut.roms");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_snapshots(&cut, SnapshotFormat::Binary), Err(RomError::Format(_))));
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let dir = std::env::temp_dir().join("romkit_dataset_test_ragged");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ragged.csv");
        std::fs::write(&path, "t,mu_1,dof_1,dof_2\n0.0,1.0,2.0,3.0\n0.1,1.0,2.0\n").unwrap();
        assert!(matches!(load_snapshots(&path, SnapshotFormat::Csv), Err(RomError::Format(_))));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n_params in 2usize..9, steps in 1usize..5, frac in 0.1f64..0.9, seed in 0u64..50) {
            let params: Vec<f64> = (0..n_params).map(|i| i as f64 * 0.5 + 0.1).collect();
            let set = toy_set(3, &params, steps);
            let (train, test) = split_train_test(&set, frac, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), set.len());
            let train_params = train.group_by_param();
            let test_params = test.group_by_param();
            prop_assert_eq!(train_params.len() + test_params.len(), n_params);
            for (p, _) in &train_params {
                prop_assert!(!test_params.iter().any(|(q, _)| q == p));
            }
        }

        #[test]
        fn normalize_round_trip(seed in 0u64..30) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cols: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
            let set = SnapshotSet::new(
                Matrix::from_columns(&cols),
                (0..6).map(|i| vec![i as f64]).collect(),
                vec![0.0; 6],
                SnapshotMeta::default(),
            ).unwrap();
            for mode in [NormalizeMode::None, NormalizeMode::MeanCenter, NormalizeMode::CenterAndScale] {
                let norm = normalize_fit(&set, mode);
                let fwd = norm.apply_matrix(set.matrix()).unwrap();
                let back = norm.invert_matrix(&fwd).unwrap();
                let err = back.sub(set.matrix()).max_abs();
                prop_assert!(err <= 1e-14, "mode {:?}: {err}", mode);
            }
        }
    }
}
