//! Free-form deformation: trivariate Bernstein lattice morphing of point
//! sets and triangle meshes.
//!
//! A lattice is an axis-aligned box carrying a `(L+1)×(M+1)×(N+1)` grid of
//! control points, each with a displacement vector. Morphing adds the
//! Bernstein-interpolated control displacement to every point inside the
//! box and leaves points outside untouched; when every axis has degree ≥ 1
//! this equals evaluating the displaced control grid directly (linear
//! precision of the Bernstein basis), and it extends unchanged to
//! degenerate axes (degree 0), which is how planar problems are handled.
//!
//! Because exterior points never move, the default parameter registry
//! freezes the outermost shell of control points so the displacement field
//! vanishes on the box faces and the composite map stays continuous. A
//! lattice whose shell carries a nonzero displacement still morphs, but a
//! warning note is attached to it.

use crate::error::{Result, RomError};
use sha2::{Digest, Sha256};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// One parameter-driven control degree of freedom: a lattice grid index and
/// the displacement component it drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfdDof {
    /// Control-point grid index `(i, j, k)`.
    pub index: [usize; 3],
    /// Displacement component: 0 = x, 1 = y, 2 = z.
    pub axis: usize,
}

/// Bernstein control lattice over an axis-aligned box.
///
/// Immutable once configured; morphing is a pure function of the lattice
/// and can run concurrently over point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct FfdLattice {
    origin: [f64; 3],
    extents: [f64; 3],
    degrees: [usize; 3],
    /// Per-control-point displacement, flat index `(i·(M+1) + j)·(N+1) + k`.
    displacements: Vec<[f64; 3]>,
    registry: Vec<FfdDof>,
    notes: Vec<String>,
}

impl FfdLattice {
    /// Lattice with the default degree 2 in every direction (3×3×3 control
    /// points) and zero displacements.
    pub fn new(origin: [f64; 3], extents: [f64; 3]) -> Result<FfdLattice> {
        FfdLattice::with_degrees(origin, extents, [2, 2, 2])
    }

    /// Lattice with explicit Bernstein degrees per axis. Degree 0 makes an
    /// axis degenerate: a single control layer whose displacement is
    /// constant along that axis.
    ///
    /// The default parameter registry drives every control point that is
    /// not on the outermost shell of any non-degenerate axis, one entry per
    /// non-degenerate displacement axis, ordered by `(i, j, k, axis)`.
    pub fn with_degrees(
        origin: [f64; 3],
        extents: [f64; 3],
        degrees: [usize; 3],
    ) -> Result<FfdLattice> {
        for a in 0..3 {
            if !(origin[a].is_finite() && extents[a].is_finite()) {
                return Err(RomError::NonFinite(format!("lattice box component {a}")));
            }
            if extents[a] <= 0.0 {
                return Err(RomError::Invalid(format!(
                    "lattice extent {a} must be positive, got {}",
                    extents[a]
                )));
            }
        }
        let count = (degrees[0] + 1) * (degrees[1] + 1) * (degrees[2] + 1);
        let mut lattice = FfdLattice {
            origin,
            extents,
            degrees,
            displacements: vec![[0.0; 3]; count],
            registry: Vec::new(),
            notes: Vec::new(),
        };
        lattice.registry = lattice.default_registry();
        Ok(lattice)
    }

    /// Planar convenience: degrees (2, 2, 0) over the given 2-D box, with
    /// the degenerate third axis spanning z ∈ [−1/2, 1/2] so points in the
    /// z = 0 plane fall inside.
    pub fn planar(origin: [f64; 2], extents: [f64; 2]) -> Result<FfdLattice> {
        FfdLattice::with_degrees(
            [origin[0], origin[1], -0.5],
            [extents[0], extents[1], 1.0],
            [2, 2, 0],
        )
    }

    fn default_registry(&self) -> Vec<FfdDof> {
        let mut dofs = Vec::new();
        for i in 0..=self.degrees[0] {
            for j in 0..=self.degrees[1] {
                for k in 0..=self.degrees[2] {
                    if self.on_shell([i, j, k]) {
                        continue;
                    }
                    for axis in 0..3 {
                        if self.degrees[axis] == 0 {
                            continue;
                        }
                        dofs.push(FfdDof { index: [i, j, k], axis });
                    }
                }
            }
        }
        dofs
    }

    /// True when the grid index sits on the outermost control-point shell
    /// of some non-degenerate axis (displacing it breaks continuity across
    /// the box boundary).
    pub fn on_shell(&self, index: [usize; 3]) -> bool {
        (0..3).any(|a| self.degrees[a] > 0 && (index[a] == 0 || index[a] == self.degrees[a]))
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn extents(&self) -> [f64; 3] {
        self.extents
    }

    pub fn degrees(&self) -> [usize; 3] {
        self.degrees
    }

    /// Number of control points.
    pub fn control_count(&self) -> usize {
        self.displacements.len()
    }

    pub fn displacements(&self) -> &[[f64; 3]] {
        &self.displacements
    }

    /// Parameter-driven dofs in declared order.
    pub fn registry(&self) -> &[FfdDof] {
        &self.registry
    }

    /// Warnings attached by the last displacement or registry change.
    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    /// True when every displacement is exactly zero (the morph is the
    /// identity and short-circuits).
    pub fn is_identity(&self) -> bool {
        self.displacements.iter().all(|d| d == &[0.0; 3])
    }

    fn flat(&self, index: [usize; 3]) -> usize {
        (index[0] * (self.degrees[1] + 1) + index[1]) * (self.degrees[2] + 1) + index[2]
    }

    fn check_index(&self, index: [usize; 3]) -> Result<()> {
        for a in 0..3 {
            if index[a] > self.degrees[a] {
                return Err(RomError::Invalid(format!(
                    "control index {index:?} out of range for degrees {:?}",
                    self.degrees
                )));
            }
        }
        Ok(())
    }

    /// Reference (undisplaced) position of a control point. Along a
    /// degenerate axis the single control layer sits at the box midplane.
    pub fn control_point(&self, index: [usize; 3]) -> Result<[f64; 3]> {
        self.check_index(index)?;
        let mut p = [0.0; 3];
        for a in 0..3 {
            let frac = if self.degrees[a] == 0 {
                0.5
            } else {
                index[a] as f64 / self.degrees[a] as f64
            };
            p[a] = self.origin[a] + self.extents[a] * frac;
        }
        Ok(p)
    }

    /// Set one control point's displacement vector directly.
    pub fn set_displacement(&mut self, index: [usize; 3], d: [f64; 3]) -> Result<()> {
        self.check_index(index)?;
        if d.iter().any(|x| !x.is_finite()) {
            return Err(RomError::NonFinite(format!("displacement for control {index:?}")));
        }
        let flat = self.flat(index);
        self.displacements[flat] = d;
        self.refresh_notes();
        Ok(())
    }

    /// Replace the parameter registry (the declared dof order).
    pub fn set_registry(&mut self, dofs: Vec<FfdDof>) -> Result<()> {
        for dof in &dofs {
            self.check_index(dof.index)?;
            if dof.axis > 2 {
                return Err(RomError::Invalid(format!(
                    "dof axis {} out of range (0..=2)",
                    dof.axis
                )));
            }
        }
        self.registry = dofs;
        Ok(())
    }

    /// Checksum over the lattice box, degrees, and the registry in declared
    /// order. Two lattices whose parameter vectors are interchangeable have
    /// equal checksums; permuting the registry changes it.
    pub fn registry_checksum(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(b"FFDREG1");
        for a in 0..3 {
            hasher.update(self.origin[a].to_le_bytes());
            hasher.update(self.extents[a].to_le_bytes());
            hasher.update((self.degrees[a] as u64).to_le_bytes());
        }
        hasher.update((self.registry.len() as u64).to_le_bytes());
        for dof in &self.registry {
            for a in 0..3 {
                hasher.update((dof.index[a] as u64).to_le_bytes());
            }
            hasher.update((dof.axis as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    fn refresh_notes(&mut self) {
        self.notes.clear();
        for i in 0..=self.degrees[0] {
            for j in 0..=self.degrees[1] {
                for k in 0..=self.degrees[2] {
                    let idx = [i, j, k];
                    if self.on_shell(idx) && self.displacements[self.flat(idx)] != [0.0; 3] {
                        self.notes.push(format!(
                            "control point {idx:?} on the lattice boundary carries a nonzero \
                             displacement; the morph is discontinuous across the box boundary"
                        ));
                    }
                }
            }
        }
    }

    fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= self.origin[a] + self.extents[a])
    }

    /// Normalized local coordinates of a point (valid inside the box).
    fn local(&self, p: &[f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.extents[0],
            (p[1] - self.origin[1]) / self.extents[1],
            (p[2] - self.origin[2]) / self.extents[2],
        ]
    }

    /// Interpolated control displacement at normalized coordinates.
    fn displacement_at(&self, s: [f64; 3]) -> [f64; 3] {
        let wx = bernstein_weights(self.degrees[0], s[0]);
        let wy = bernstein_weights(self.degrees[1], s[1]);
        let wz = bernstein_weights(self.degrees[2], s[2]);
        let mut d = [0.0; 3];
        let mut flat = 0;
        for &bx in &wx {
            for &by in &wy {
                let bxy = bx * by;
                for &bz in &wz {
                    let w = bxy * bz;
                    let dv = &self.displacements[flat];
                    d[0] += w * dv[0];
                    d[1] += w * dv[1];
                    d[2] += w * dv[2];
                    flat += 1;
                }
            }
        }
        d
    }
}

/// Build a lattice from a flat parameter vector: entry `n` becomes the
/// displacement component of the template's `n`-th registry dof. Control
/// points outside the registry keep the template's displacements.
pub fn ffd_from_parameters(template: &FfdLattice, mu: &[f64]) -> Result<FfdLattice> {
    if mu.len() != template.registry.len() {
        return Err(RomError::Shape(format!(
            "parameter vector has {} entries but the lattice registry declares {} dofs",
            mu.len(),
            template.registry.len()
        )));
    }
    if mu.iter().any(|x| !x.is_finite()) {
        return Err(RomError::NonFinite("lattice parameter vector".into()));
    }
    let mut lattice = template.clone();
    for (dof, &value) in template.registry.iter().zip(mu) {
        let flat = lattice.flat(dof.index);
        lattice.displacements[flat][dof.axis] = value;
    }
    lattice.refresh_notes();
    Ok(lattice)
}

/// Morph a point set: points inside the box move by the Bernstein-weighted
/// control displacement, points outside are returned unchanged. A lattice
/// with all-zero displacements returns the input bitwise.
pub fn ffd_morph(lattice: &FfdLattice, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    for (n, p) in points.iter().enumerate() {
        if p.iter().any(|x| !x.is_finite()) {
            return Err(RomError::NonFinite(format!("point {n}")));
        }
    }
    if lattice.is_identity() {
        return Ok(points.to_vec());
    }
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        if !lattice.contains(p) {
            out.push(*p);
            continue;
        }
        let d = lattice.displacement_at(lattice.local(p));
        out.push([p[0] + d[0], p[1] + d[1], p[2] + d[2]]);
    }
    Ok(out)
}

/// Jacobian of the morph at a point: identity outside the box, otherwise
/// `I + ∂d/∂x` from analytic Bernstein derivatives. Row r, column c holds
/// ∂(morph_r)/∂x_c.
pub fn morph_jacobian(lattice: &FfdLattice, p: &[f64; 3]) -> Result<[[f64; 3]; 3]> {
    if p.iter().any(|x| !x.is_finite()) {
        return Err(RomError::NonFinite("jacobian probe point".into()));
    }
    let mut jac = [[0.0; 3]; 3];
    for (r, row) in jac.iter_mut().enumerate() {
        row[r] = 1.0;
    }
    if !lattice.contains(p) || lattice.is_identity() {
        return Ok(jac);
    }
    let s = lattice.local(p);
    let w = [
        bernstein_weights(lattice.degrees[0], s[0]),
        bernstein_weights(lattice.degrees[1], s[1]),
        bernstein_weights(lattice.degrees[2], s[2]),
    ];
    let dw = [
        bernstein_derivatives(lattice.degrees[0], s[0]),
        bernstein_derivatives(lattice.degrees[1], s[1]),
        bernstein_derivatives(lattice.degrees[2], s[2]),
    ];
    let mut flat = 0;
    for i in 0..w[0].len() {
        for j in 0..w[1].len() {
            for k in 0..w[2].len() {
                let dv = &lattice.displacements[flat];
                flat += 1;
                // d/ds, d/dt, d/dr weights; chain rule divides by the extent.
                let grad = [
                    dw[0][i] * w[1][j] * w[2][k] / lattice.extents[0],
                    w[0][i] * dw[1][j] * w[2][k] / lattice.extents[1],
                    w[0][i] * w[1][j] * dw[2][k] / lattice.extents[2],
                ];
                for r in 0..3 {
                    for c in 0..3 {
                        jac[r][c] += dv[r] * grad[c];
                    }
                }
            }
        }
    }
    Ok(jac)
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Injectivity spot check: evaluates det(Jacobian) on a grid of probe
/// points strictly inside the box (`samples` cell centers per
/// non-degenerate axis, one midplane sample along degenerate axes) and
/// returns the minimum. A non-positive value means the morph folds and the
/// image can self-overlap.
pub fn jacobian_spot_check(lattice: &FfdLattice, samples: usize) -> Result<f64> {
    if samples == 0 {
        return Err(RomError::Invalid("jacobian spot check needs at least one sample".into()));
    }
    let counts: Vec<usize> =
        (0..3).map(|a| if lattice.degrees[a] == 0 { 1 } else { samples }).collect();
    let mut min_det = f64::INFINITY;
    for qi in 0..counts[0] {
        for qj in 0..counts[1] {
            for qk in 0..counts[2] {
                let q = [qi, qj, qk];
                let mut p = [0.0; 3];
                for a in 0..3 {
                    let frac = (q[a] as f64 + 0.5) / counts[a] as f64;
                    p[a] = lattice.origin[a] + lattice.extents[a] * frac;
                }
                let jac = morph_jacobian(lattice, &p)?;
                min_det = min_det.min(det3(&jac));
            }
        }
    }
    Ok(min_det)
}

/// All Bernstein basis values `B_i^n(u)` for `i = 0..=n`, by the stable
/// degree-raising recurrence (all weights non-negative for u ∈ [0, 1] and
/// summing to one).
pub fn bernstein_weights(degree: usize, u: f64) -> Vec<f64> {
    let mut w = vec![0.0; degree + 1];
    w[0] = 1.0;
    for j in 1..=degree {
        let mut saved = 0.0;
        for item in w.iter_mut().take(j) {
            let tmp = *item;
            *item = saved + (1.0 - u) * tmp;
            saved = u * tmp;
        }
        w[j] = saved;
    }
    w
}

/// All Bernstein derivative values `d/du B_i^n(u)`, via
/// `n·(B_{i−1}^{n−1} − B_i^{n−1})`; zero for a degenerate axis (n = 0).
pub fn bernstein_derivatives(degree: usize, u: f64) -> Vec<f64> {
    if degree == 0 {
        return vec![0.0];
    }
    let lower = bernstein_weights(degree - 1, u);
    let n = degree as f64;
    (0..=degree)
        .map(|i| {
            let left = if i == 0 { 0.0 } else { lower[i - 1] };
            let right = if i == degree { 0.0 } else { lower[i] };
            n * (left - right)
        })
        .collect()
}

/// Triangle surface mesh: vertex coordinates plus 0-based corner indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in self.vertices.iter().enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(RomError::NonFinite(format!("mesh vertex {n}")));
            }
        }
        for (e, tri) in self.triangles.iter().enumerate() {
            for &c in tri {
                if c >= self.vertices.len() {
                    return Err(RomError::Invalid(format!(
                        "triangle {e} references vertex {c} but the mesh has {}",
                        self.vertices.len()
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(RomError::Invalid(format!("triangle {e} repeats a vertex: {tri:?}")));
            }
        }
        Ok(())
    }
}

/// Element-quality report for a (morphed) mesh.
#[derive(Debug, Clone, Copy)]
pub struct MeshQuality {
    /// Smallest orientation-signed triangle area; negative means some
    /// element flipped relative to the reference mesh.
    pub min_signed_area: f64,
    /// Smallest shape quality 4√3·A/(l₁²+l₂²+l₃²) (equilateral = 1).
    pub min_quality: f64,
    /// Sum of unsigned triangle areas.
    pub total_area: f64,
}

/// Half cross product of the triangle edge vectors — its length is the
/// area, its direction the normal.
fn half_cross(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> [f64; 3] {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    [
        0.5 * (u[1] * v[2] - u[2] * v[1]),
        0.5 * (u[2] * v[0] - u[0] * v[2]),
        0.5 * (u[0] * v[1] - u[1] * v[0]),
    ]
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Morph a mesh's vertices, keeping connectivity, and report element
/// quality. The signed area of each morphed triangle is its area component
/// along the reference triangle's unit normal (for planar meshes with
/// counter-clockwise triangles this is the classic signed area), so a
/// flipped element shows up negative. Elements with signed area below
/// −1e−12 fail the morph with their indices listed.
pub fn morph_mesh(lattice: &FfdLattice, mesh: &TriMesh) -> Result<(TriMesh, MeshQuality)> {
    mesh.validate()?;
    let vertices = ffd_morph(lattice, &mesh.vertices)?;
    let morphed = TriMesh { vertices, triangles: mesh.triangles.clone() };
    let mut quality =
        MeshQuality { min_signed_area: f64::INFINITY, min_quality: f64::INFINITY, total_area: 0.0 };
    let mut inverted = Vec::new();
    for (e, tri) in morphed.triangles.iter().enumerate() {
        let [a, b, c] = *tri;
        let n_ref = half_cross(&mesh.vertices[a], &mesh.vertices[b], &mesh.vertices[c]);
        let n_mor = half_cross(&morphed.vertices[a], &morphed.vertices[b], &morphed.vertices[c]);
        let area = norm3(&n_mor);
        let ref_area = norm3(&n_ref);
        let signed = if ref_area > 0.0 {
            (n_mor[0] * n_ref[0] + n_mor[1] * n_ref[1] + n_mor[2] * n_ref[2]) / ref_area
        } else {
            area
        };
        let edge_sq = dist2(&morphed.vertices[a], &morphed.vertices[b])
            + dist2(&morphed.vertices[b], &morphed.vertices[c])
            + dist2(&morphed.vertices[c], &morphed.vertices[a]);
        let q = if edge_sq > 0.0 { 4.0 * 3.0f64.sqrt() * area / edge_sq } else { 0.0 };
        quality.min_signed_area = quality.min_signed_area.min(signed);
        quality.min_quality = quality.min_quality.min(q);
        quality.total_area += area;
        if signed < -1e-12 {
            inverted.push(e);
        }
    }
    if morphed.triangles.is_empty() {
        quality.min_signed_area = 0.0;
        quality.min_quality = 0.0;
    }
    if !inverted.is_empty() {
        let shown: Vec<String> = inverted.iter().take(16).map(|e| e.to_string()).collect();
        let more = if inverted.len() > 16 {
            format!(" and {} more", inverted.len() - 16)
        } else {
            String::new()
        };
        return Err(RomError::Invalid(format!(
            "morph inverted {} mesh elements: [{}]{}",
            inverted.len(),
            shown.join(", "),
            more
        )));
    }
    Ok((morphed, quality))
}

/// Write a mesh in the minimal ASCII format: vertex count, one `x y z`
/// line per vertex, triangle count, one `i j k` index line per triangle
/// (0-based). Coordinates use the shortest representation that parses back
/// to the same float.
pub fn write_mesh_ascii(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    let path = path.as_ref();
    mesh.validate()?;
    let file = std::fs::File::create(path).map_err(|e| RomError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| RomError::io(path, e);
    writeln!(w, "{}", mesh.vertices.len()).map_err(io_err)?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", v[0], v[1], v[2]).map_err(io_err)?;
    }
    writeln!(w, "{}", mesh.triangles.len()).map_err(io_err)?;
    for t in &mesh.triangles {
        writeln!(w, "{} {} {}", t[0], t[1], t[2]).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Read the ASCII mesh format written by [`write_mesh_ascii`]. Blank lines
/// are ignored; anything else out of place is a format error naming the
/// line.
pub fn read_mesh_ascii(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| RomError::io(path, e))?;
    let mut lines = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RomError::io(path, e))?;
        if !line.trim().is_empty() {
            lines.push((n + 1, line));
        }
    }
    let fmt = |msg: String| RomError::Format(format!("{}: {msg}", path.display()));
    let mut cursor = lines.into_iter();
    let mut next = |what: &str| {
        cursor.next().ok_or_else(|| fmt(format!("unexpected end of file, expected {what}")))
    };
    let (n, line) = next("vertex count")?;
    let nv: usize = line
        .trim()
        .parse()
        .map_err(|_| fmt(format!("line {n}: bad vertex count {:?}", line.trim())))?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, line) = next("a vertex line")?;
        vertices.push(parse_floats::<3>(line.trim(), &[' ', '\t']).map_err(|msg| {
            fmt(format!("line {n}: {msg}"))
        })?);
    }
    let (n, line) = next("triangle count")?;
    let nt: usize = line
        .trim()
        .parse()
        .map_err(|_| fmt(format!("line {n}: bad triangle count {:?}", line.trim())))?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (n, line) = next("a triangle line")?;
        triangles.push(parse_indices::<3>(line.trim(), &[' ', '\t']).map_err(|msg| {
            fmt(format!("line {n}: {msg}"))
        })?);
    }
    if let Some((n, _)) = cursor.next() {
        return Err(fmt(format!("line {n}: trailing content after the declared counts")));
    }
    let mesh = TriMesh { vertices, triangles };
    mesh.validate()?;
    Ok(mesh)
}

/// Import the same mesh data from a pair of CSV files: vertex rows `x,y,z`
/// and triangle rows `i,j,k`. A non-numeric first row in either file is
/// treated as a header and skipped; counts are implied by the row counts.
pub fn read_mesh_csv(
    vertices_path: impl AsRef<Path>,
    triangles_path: impl AsRef<Path>,
) -> Result<TriMesh> {
    let vertices = read_csv_rows(vertices_path.as_ref(), |line| parse_floats::<3>(line, &[',']))?;
    let triangles =
        read_csv_rows(triangles_path.as_ref(), |line| parse_indices::<3>(line, &[',']))?;
    let mesh = TriMesh { vertices, triangles };
    mesh.validate()?;
    Ok(mesh)
}

fn read_csv_rows<T>(
    path: &Path,
    parse: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| RomError::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RomError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match parse(trimmed) {
            Ok(row) => rows.push(row),
            Err(msg) if n == 0 => {
                // Tolerate one header row.
                let _ = msg;
            }
            Err(msg) => {
                return Err(RomError::Format(format!(
                    "{}: line {}: {msg}",
                    path.display(),
                    n + 1
                )));
            }
        }
    }
    Ok(rows)
}

fn parse_floats<const K: usize>(
    line: &str,
    separators: &[char],
) -> std::result::Result<[f64; K], String> {
    let fields: Vec<&str> = line.split(separators).filter(|f| !f.trim().is_empty()).collect();
    if fields.len() != K {
        return Err(format!("expected {K} numbers, found {} in {line:?}", fields.len()));
    }
    let mut out = [0.0; K];
    for (slot, field) in out.iter_mut().zip(&fields) {
        *slot = field
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("bad number {:?} in {line:?}", field.trim()))?;
    }
    Ok(out)
}

fn parse_indices<const K: usize>(
    line: &str,
    separators: &[char],
) -> std::result::Result<[usize; K], String> {
    let fields: Vec<&str> = line.split(separators).filter(|f| !f.trim().is_empty()).collect();
    if fields.len() != K {
        return Err(format!("expected {K} indices, found {} in {line:?}", fields.len()));
    }
    let mut out = [0; K];
    for (slot, field) in out.iter_mut().zip(&fields) {
        *slot = field
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("bad index {:?} in {line:?}", field.trim()))?;
    }
    Ok(out)
}

const LATTICE_MAGIC: &[u8; 4] = b"ROMF";
const LATTICE_VERSION: u32 = 1;

/// Save a lattice in the binary container format (magic `ROMF`).
pub fn save_lattice(path: impl AsRef<Path>, lattice: &FfdLattice) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(LATTICE_MAGIC);
    buf.extend_from_slice(&LATTICE_VERSION.to_le_bytes());
    for a in 0..3 {
        buf.extend_from_slice(&lattice.origin[a].to_le_bytes());
    }
    for a in 0..3 {
        buf.extend_from_slice(&lattice.extents[a].to_le_bytes());
    }
    for a in 0..3 {
        buf.extend_from_slice(&(lattice.degrees[a] as u64).to_le_bytes());
    }
    for d in &lattice.displacements {
        for a in 0..3 {
            buf.extend_from_slice(&d[a].to_le_bytes());
        }
    }
    buf.extend_from_slice(&(lattice.registry.len() as u64).to_le_bytes());
    for dof in &lattice.registry {
        for a in 0..3 {
            buf.extend_from_slice(&(dof.index[a] as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(dof.axis as u64).to_le_bytes());
    }
    buf.extend_from_slice(&lattice.registry_checksum().to_le_bytes());
    std::fs::write(path, &buf).map_err(|e| RomError::io(path, e))
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, count: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(count)?;
        if end > self.bytes.len() {
            return None;
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Some(slice)
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().expect("sized")))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().expect("sized")))
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().expect("sized")))
    }
}

/// Load a lattice saved by [`save_lattice`], verifying the stored registry
/// checksum.
pub fn load_lattice(path: impl AsRef<Path>) -> Result<FfdLattice> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| RomError::io(path, e))?;
    let fmt = |msg: &str| RomError::Format(format!("{}: {msg}", path.display()));
    let mut cur = ByteCursor { bytes: &bytes, pos: 0 };
    let truncated = || fmt("truncated lattice file");
    if cur.take(4).ok_or_else(truncated)? != LATTICE_MAGIC {
        return Err(fmt(&format!("bad magic bytes, expected {LATTICE_MAGIC:?}")));
    }
    let version = cur.u32().ok_or_else(truncated)?;
    if version != LATTICE_VERSION {
        return Err(fmt(&format!("unsupported version {version}")));
    }
    let mut origin = [0.0; 3];
    for slot in &mut origin {
        *slot = cur.f64().ok_or_else(truncated)?;
    }
    let mut extents = [0.0; 3];
    for slot in &mut extents {
        *slot = cur.f64().ok_or_else(truncated)?;
    }
    let mut degrees = [0usize; 3];
    for slot in &mut degrees {
        *slot = cur.u64().ok_or_else(truncated)? as usize;
    }
    let mut lattice = FfdLattice::with_degrees(origin, extents, degrees)?;
    for n in 0..lattice.displacements.len() {
        let mut d = [0.0; 3];
        for slot in &mut d {
            let v = cur.f64().ok_or_else(truncated)?;
            if !v.is_finite() {
                return Err(fmt("non-finite displacement"));
            }
            *slot = v;
        }
        lattice.displacements[n] = d;
    }
    let dof_count = cur.u64().ok_or_else(truncated)? as usize;
    if dof_count > 4 * lattice.control_count() {
        return Err(fmt(&format!("registry declares {dof_count} dofs, more than the grid holds")));
    }
    let mut registry = Vec::with_capacity(dof_count);
    for _ in 0..dof_count {
        let mut index = [0usize; 3];
        for slot in &mut index {
            *slot = cur.u64().ok_or_else(truncated)? as usize;
        }
        let axis = cur.u64().ok_or_else(truncated)? as usize;
        registry.push(FfdDof { index, axis });
    }
    let stored_checksum = cur.u64().ok_or_else(truncated)?;
    if cur.pos != bytes.len() {
        return Err(fmt(&format!("{} trailing bytes after the lattice", bytes.len() - cur.pos)));
    }
    lattice.set_registry(registry)?;
    lattice.refresh_notes();
    if lattice.registry_checksum() != stored_checksum {
        return Err(fmt("registry checksum mismatch: dof order differs from the saved one"));
    }
    Ok(lattice)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_near(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn binomial(n: usize, k: usize) -> f64 {
        let mut row = vec![1.0];
        for _ in 0..n {
            let mut next = vec![1.0];
            for w in row.windows(2) {
                next.push(w[0] + w[1]);
            }
            next.push(1.0);
            row = next;
        }
        row[k]
    }

    #[test]
    fn bernstein_matches_binomial_formula() {
        for degree in 0..=6 {
            for step in 0..=20 {
                let u = step as f64 / 20.0;
                let weights = bernstein_weights(degree, u);
                for (i, &w) in weights.iter().enumerate() {
                    let direct = binomial(degree, i)
                        * u.powi(i as i32)
                        * (1.0 - u).powi((degree - i) as i32);
                    assert_near(w, direct, 1e-14);
                }
            }
        }
    }

    #[test]
    fn bernstein_derivatives_match_finite_differences() {
        let h = 1e-6;
        for degree in 0..=5 {
            for step in 1..20 {
                let u = step as f64 / 20.0;
                let derivs = bernstein_derivatives(degree, u);
                let up = bernstein_weights(degree, u + h);
                let dn = bernstein_weights(degree, u - h);
                for i in 0..=degree {
                    assert_near(derivs[i], (up[i] - dn[i]) / (2.0 * h), 1e-7);
                }
            }
        }
    }

    #[test]
    fn zero_displacement_is_bitwise_identity() {
        let lattice = FfdLattice::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        assert!(lattice.is_identity());
        let points =
            vec![[0.3, 0.7, 0.1], [-2.0, 0.5, 0.5], [0.123456789, 0.987654321, 0.555], [5.0; 3]];
        let morphed = ffd_morph(&lattice, &points).unwrap();
        for (p, q) in points.iter().zip(&morphed) {
            for a in 0..3 {
                assert!(p[a].to_bits() == q[a].to_bits());
            }
        }
    }

    #[test]
    fn constant_displacement_translates_interior_points() {
        let mut lattice = FfdLattice::new([0.0, 0.0, 0.0], [2.0, 1.0, 1.0]).unwrap();
        let d = [0.25, -0.125, 0.5];
        for i in 0..=2 {
            for j in 0..=2 {
                for k in 0..=2 {
                    lattice.set_displacement([i, j, k], d).unwrap();
                }
            }
        }
        // Moving the boundary shell breaks continuity with the fixed
        // exterior, and the lattice says so.
        assert!(!lattice.notes().is_empty());
        let points = vec![[0.1, 0.2, 0.9], [1.7, 0.5, 0.01], [1.0, 0.5, 0.5]];
        let morphed = ffd_morph(&lattice, &points).unwrap();
        for (p, q) in points.iter().zip(&morphed) {
            for a in 0..3 {
                assert_near(q[a], p[a] + d[a], 1e-14);
            }
        }
        // A point outside the box is untouched.
        let outside = ffd_morph(&lattice, &[[3.0, 0.5, 0.5]]).unwrap();
        assert_eq!(outside[0], [3.0, 0.5, 0.5]);
    }

    #[test]
    fn corner_displacement_weights_box_center_by_one_eighth() {
        let mut lattice =
            FfdLattice::with_degrees([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [1, 1, 1]).unwrap();
        let d = [0.8, -0.4, 0.2];
        lattice.set_displacement([1, 1, 1], d).unwrap();
        let center = ffd_morph(&lattice, &[[0.5, 0.5, 0.5]]).unwrap()[0];
        // B_1^1(1/2) = 1/2 on each axis, so the corner contributes
        // (1/2)^3 = 1/8 of its displacement at the box center.
        for a in 0..3 {
            assert_near(center[a], 0.5 + d[a] / 8.0, 1e-15);
        }
    }

    #[test]
    fn default_registry_drives_interior_points_only() {
        let cube = FfdLattice::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        // 3x3x3 grid: the only off-shell point is (1,1,1), three axes.
        assert_eq!(cube.registry().len(), 3);
        for (axis, dof) in cube.registry().iter().enumerate() {
            assert_eq!(dof.index, [1, 1, 1]);
            assert_eq!(dof.axis, axis);
        }
        let planar = FfdLattice::planar([0.0, 0.0], [1.0, 1.0]).unwrap();
        // Degenerate z: one interior point (1,1,0), x/y axes only.
        assert_eq!(planar.registry().len(), 2);
        assert!(planar.registry().iter().all(|dof| dof.index == [1, 1, 0] && dof.axis < 2));
    }

    #[test]
    fn from_parameters_fills_displacements_in_declared_order() {
        let template = FfdLattice::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        let zero = ffd_from_parameters(&template, &[0.0, 0.0, 0.0]).unwrap();
        assert!(zero.is_identity());
        let lattice = ffd_from_parameters(&template, &[0.4, 0.0, 0.0]).unwrap();
        let flat = lattice.flat([1, 1, 1]);
        assert_eq!(lattice.displacements()[flat], [0.4, 0.0, 0.0]);
        assert!(lattice.notes().is_empty());
        assert!(matches!(
            ffd_from_parameters(&template, &[0.4]),
            Err(RomError::Shape(_))
        ));
    }

    #[test]
    fn registry_checksum_detects_permutation_and_round_trips() {
        let mut lattice =
            FfdLattice::with_degrees([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [3, 3, 2]).unwrap();
        let declared = lattice.registry().to_vec();
        assert!(declared.len() >= 2);
        let checksum = lattice.registry_checksum();
        let mut permuted = declared.clone();
        permuted.swap(0, 1);
        lattice.set_registry(permuted).unwrap();
        assert_ne!(lattice.registry_checksum(), checksum);
        lattice.set_registry(declared).unwrap();
        assert_eq!(lattice.registry_checksum(), checksum);

        let dir = std::env::temp_dir().join("romkit-ffd-lattice");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("lattice.bin");
        let stamped = ffd_from_parameters(&lattice, &vec![0.01; lattice.registry().len()]).unwrap();
        save_lattice(&path, &stamped).unwrap();
        let back = load_lattice(&path).unwrap();
        assert_eq!(back, stamped);
        assert_eq!(back.registry_checksum(), checksum);

        // Flipping a stored-checksum byte no longer matches the registry.
        let mut bytes = std::fs::read(&path).unwrap();
        let len = bytes.len();
        bytes[len - 1] ^= 1;
        let bad = dir.join("lattice-bad.bin");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_lattice(&bad), Err(RomError::Format(_))));
    }

    #[test]
    fn affine_control_displacement_reproduces_the_affine_map() {
        let origin = [-0.5, 0.25, 0.0];
        let extents = [2.0, 1.5, 1.0];
        for degrees in [[2, 2, 2], [3, 2, 1]] {
            let mut lattice = FfdLattice::with_degrees(origin, extents, degrees).unwrap();
            let aff = [[1.1, 0.2, -0.1], [0.0, 0.9, 0.3], [0.05, -0.2, 1.2]];
            let shift = [0.3, -0.1, 0.2];
            for i in 0..=degrees[0] {
                for j in 0..=degrees[1] {
                    for k in 0..=degrees[2] {
                        let p = lattice.control_point([i, j, k]).unwrap();
                        let mut d = [0.0; 3];
                        for r in 0..3 {
                            d[r] = aff[r][0] * p[0] + aff[r][1] * p[1] + aff[r][2] * p[2]
                                + shift[r]
                                - p[r];
                        }
                        lattice.set_displacement([i, j, k], d).unwrap();
                    }
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..40 {
                let p = [
                    origin[0] + extents[0] * rng.gen::<f64>(),
                    origin[1] + extents[1] * rng.gen::<f64>(),
                    origin[2] + extents[2] * rng.gen::<f64>(),
                ];
                let q = ffd_morph(&lattice, &[p]).unwrap()[0];
                for r in 0..3 {
                    let want = aff[r][0] * p[0] + aff[r][1] * p[1] + aff[r][2] * p[2] + shift[r];
                    assert_near(q[r], want, 1e-12);
                }
            }
        }
    }

    #[test]
    fn frozen_shell_keeps_the_boundary_continuous() {
        let template = FfdLattice::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        let lattice = ffd_from_parameters(&template, &[0.3, -0.2, 0.25]).unwrap();
        assert!(lattice.notes().is_empty());
        // Probe just inside each face: the morph must match the identity
        // seen outside the box to 1e-8.
        let eps = 1e-9;
        let mut probes = Vec::new();
        for a in 0..3 {
            for (other1, other2) in [(0.3, 0.8), (0.5, 0.5), (0.9, 0.15)] {
                let mut lo = [other1, other2, other1];
                lo[a] = eps;
                probes.push(lo);
                let mut hi = [other2, other1, other2];
                hi[a] = 1.0 - eps;
                probes.push(hi);
            }
        }
        let morphed = ffd_morph(&lattice, &probes).unwrap();
        for (p, q) in probes.iter().zip(&morphed) {
            let dist = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2))
                .sqrt();
            assert!(dist <= 1e-8, "face point moved by {dist}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let template =
            FfdLattice::with_degrees([0.0, -1.0, 0.0], [2.0, 2.0, 1.5], [2, 3, 2]).unwrap();
        let count = template.registry().len();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu: Vec<f64> = (0..count).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let lattice = ffd_from_parameters(&template, &mu).unwrap();
        let h = 1e-6;
        for _ in 0..20 {
            let p = [
                0.0 + 2.0 * rng.gen_range(0.05..0.95),
                -1.0 + 2.0 * rng.gen_range(0.05..0.95),
                0.0 + 1.5 * rng.gen_range(0.05..0.95),
            ];
            let jac = morph_jacobian(&lattice, &p).unwrap();
            for c in 0..3 {
                let mut up = p;
                up[c] += h;
                let mut dn = p;
                dn[c] -= h;
                let qu = ffd_morph(&lattice, &[up]).unwrap()[0];
                let qd = ffd_morph(&lattice, &[dn]).unwrap()[0];
                for r in 0..3 {
                    assert_near(jac[r][c], (qu[r] - qd[r]) / (2.0 * h), 1e-6);
                }
            }
        }
    }

    #[test]
    fn spot_check_flags_folding_displacements() {
        let template = FfdLattice::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(jacobian_spot_check(&template, 5).unwrap(), 1.0);
        let mild = ffd_from_parameters(&template, &[0.2, 0.1, -0.15]).unwrap();
        assert!(jacobian_spot_check(&mild, 7).unwrap() > 0.0);
        // Pushing the interior control point three box widths away folds
        // the map over itself somewhere inside.
        let folded = ffd_from_parameters(&template, &[3.0, 0.0, 0.0]).unwrap();
        assert!(jacobian_spot_check(&folded, 7).unwrap() <= 0.0);
    }

    fn unit_square_mesh(n: usize) -> TriMesh {
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64, 0.0]);
            }
        }
        let at = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                triangles.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
                triangles.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
            }
        }
        TriMesh { vertices, triangles }
    }

    #[test]
    fn morph_mesh_identity_and_translation_preserve_areas() {
        let mesh = unit_square_mesh(8);
        let identity = FfdLattice::planar([0.0, 0.0], [1.0, 1.0]).unwrap();
        let (same, quality) = morph_mesh(&identity, &mesh).unwrap();
        assert_eq!(same, mesh);
        assert_near(quality.total_area, 1.0, 1e-12);
        assert!(quality.min_signed_area > 0.0);

        // Uniform translation of every control point.
        let mut translated = FfdLattice::planar([0.0, 0.0], [1.0, 1.0]).unwrap();
        for i in 0..=2 {
            for j in 0..=2 {
                translated.set_displacement([i, j, 0], [0.4, -0.7, 0.0]).unwrap();
            }
        }
        let (moved, q2) = morph_mesh(&translated, &mesh).unwrap();
        assert_near(q2.total_area, 1.0, 1e-12);
        assert_near(q2.min_signed_area, quality.min_signed_area, 1e-12);
        for (v, w) in mesh.vertices.iter().zip(&moved.vertices) {
            assert_near(w[0], v[0] + 0.4, 1e-14);
            assert_near(w[1], v[1] - 0.7, 1e-14);
        }
    }

    #[test]
    fn morph_mesh_lists_inverted_elements() {
        let mesh = unit_square_mesh(4);
        let template = FfdLattice::planar([0.0, 0.0], [1.0, 1.0]).unwrap();
        let folded = ffd_from_parameters(&template, &[4.0, 0.0]).unwrap();
        match morph_mesh(&folded, &mesh) {
            Err(RomError::Invalid(msg)) => {
                assert!(msg.contains("inverted"), "{msg}");
                // The message names concrete element indices.
                assert!(msg.contains('[') && msg.contains(']'), "{msg}");
            }
            other => panic!("expected inversion failure, got {other:?}"),
        }
    }

    /// Gauss-Legendre nodes/weights on [0, 1] (10 points, exact past
    /// degree 19).
    fn gauss_01() -> Vec<(f64, f64)> {
        let nodes = [
            -0.9739065285171717,
            -0.8650633666889845,
            -0.6794095682990244,
            -0.4333953941292472,
            -0.1488743389816312,
            0.1488743389816312,
            0.4333953941292472,
            0.6794095682990244,
            0.8650633666889845,
            0.9739065285171717,
        ];
        let weights = [
            0.0666713443086881,
            0.1494513491505806,
            0.2190863625159820,
            0.2692667193099963,
            0.2955242247147529,
            0.2955242247147529,
            0.2692667193099963,
            0.2190863625159820,
            0.1494513491505806,
            0.0666713443086881,
        ];
        nodes.iter().zip(&weights).map(|(&x, &w)| (0.5 * (x + 1.0), 0.5 * w)).collect()
    }

    #[test]
    fn morphed_mesh_area_matches_jacobian_quadrature() {
        // The lattice box extends beyond the meshed unit square and sits
        // asymmetrically around it, so pushing the interior control point
        // moves the mesh boundary and genuinely changes the total area (a
        // mesh filling the whole box would keep its area exactly, because
        // the frozen shell pins the boundary).
        let template = FfdLattice::planar([-0.4, -0.25], [1.5, 1.5]).unwrap();
        let lattice = ffd_from_parameters(&template, &[0.3, 0.0]).unwrap();

        // Independent oracle: area of the morphed unit square is the
        // integral of the Jacobian determinant, integrated with tensor
        // Gauss-Legendre quadrature and the Jacobian itself taken from
        // central differences of the morph (not the analytic derivative
        // path).
        let h = 1e-5;
        let rule = gauss_01();
        let mut oracle = 0.0;
        for &(x, wx) in &rule {
            for &(y, wy) in &rule {
                let probe = |px: f64, py: f64| ffd_morph(&lattice, &[[px, py, 0.0]]).unwrap()[0];
                let xp = probe(x + h, y);
                let xm = probe(x - h, y);
                let yp = probe(x, y + h);
                let ym = probe(x, y - h);
                let j00 = (xp[0] - xm[0]) / (2.0 * h);
                let j10 = (xp[1] - xm[1]) / (2.0 * h);
                let j01 = (yp[0] - ym[0]) / (2.0 * h);
                let j11 = (yp[1] - ym[1]) / (2.0 * h);
                oracle += wx * wy * (j00 * j11 - j01 * j10);
            }
        }

        // Straight-edge triangle areas converge to the same integral at
        // second order; Richardson extrapolation of two refinements
        // removes the leading term.
        let coarse = morph_mesh(&lattice, &unit_square_mesh(64)).unwrap().1.total_area;
        let fine = morph_mesh(&lattice, &unit_square_mesh(128)).unwrap().1.total_area;
        let extrapolated = (4.0 * fine - coarse) / 3.0;
        assert!(
            (1.0 - oracle).abs() > 1e-3,
            "displacement should actually change the area (oracle {oracle})"
        );
        assert_near(extrapolated, oracle, 1e-6);
    }

    #[test]
    fn mesh_ascii_round_trips_bitwise_and_csv_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut mesh = unit_square_mesh(3);
        for v in &mut mesh.vertices {
            v[0] += rng.gen_range(-0.01..0.01);
            v[1] += rng.gen_range(-0.01..0.01);
            v[2] = rng.gen_range(-1.0..1.0);
        }
        let dir = std::env::temp_dir().join("romkit-ffd-mesh");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mesh.txt");
        write_mesh_ascii(&path, &mesh).unwrap();
        let back = read_mesh_ascii(&path).unwrap();
        assert_eq!(back, mesh);

        let vcsv = dir.join("vertices.csv");
        let tcsv = dir.join("triangles.csv");
        let mut vtext = String::from("x,y,z\n");
        for v in &mesh.vertices {
            vtext.push_str(&format!("{},{},{}\n", v[0], v[1], v[2]));
        }
        let mut ttext = String::new();
        for t in &mesh.triangles {
            ttext.push_str(&format!("{},{},{}\n", t[0], t[1], t[2]));
        }
        std::fs::write(&vcsv, vtext).unwrap();
        std::fs::write(&tcsv, ttext).unwrap();
        let csv_mesh = read_mesh_csv(&vcsv, &tcsv).unwrap();
        assert_eq!(csv_mesh, mesh);
    }

    #[test]
    fn mesh_reader_rejects_malformed_files() {
        let dir = std::env::temp_dir().join("romkit-ffd-badmesh");
        std::fs::create_dir_all(&dir).unwrap();
        let cases = [
            ("truncated.txt", "3\n0 0 0\n"),
            ("badcount.txt", "two\n"),
            ("badindex.txt", "3\n0 0 0\n1 0 0\n0 1 0\n1\n0 1 5\n"),
            ("trailing.txt", "3\n0 0 0\n1 0 0\n0 1 0\n1\n0 1 2\nextra\n"),
            ("badfloat.txt", "1\n0 zero 0\n0\n"),
        ];
        for (name, text) in cases {
            let path = dir.join(name);
            std::fs::write(&path, text).unwrap();
            let result = read_mesh_ascii(&path);
            assert!(
                matches!(result, Err(RomError::Format(_)) | Err(RomError::Invalid(_))),
                "{name}: {result:?}"
            );
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(degree in 0usize..8, u in 0.0f64..1.0) {
            let weights = bernstein_weights(degree, u);
            let sum: f64 = weights.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-14);
            prop_assert!(weights.iter().all(|&w| w >= 0.0));
        }

        #[test]
        fn points_outside_the_box_never_move(seed in 0u64..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let template = FfdLattice::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
            let mu: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let lattice = ffd_from_parameters(&template, &mu).unwrap();
            for _ in 0..20 {
                let mut p = [rng.gen_range(-3.0..4.0), rng.gen_range(-3.0..4.0), rng.gen_range(-3.0..4.0)];
                // Push the point outside along one random axis.
                let axis = rng.gen_range(0..3usize);
                p[axis] = if rng.gen::<bool>() { rng.gen_range(1.0001..4.0) } else { rng.gen_range(-3.0..-0.0001) };
                let q = ffd_morph(&lattice, &[p]).unwrap()[0];
                prop_assert_eq!(p, q);
            }
        }
    }
}
