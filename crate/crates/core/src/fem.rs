//! Piecewise-linear Lagrange finite elements on [`SlabMesh`]es.
//!
//! Coefficients such as `exp(a)` are evaluated once per simplex at its
//! centroid from the P1 interpolant (one-point quadrature); mass terms are
//! integrated exactly.

use crate::error::{Error, Result};
use crate::mesh::{simplex_geometry, BoundaryTag, SlabMesh};
use crate::sparse::SparseSymMatrix;

/// Nodal coefficients of a P1 field on a particular mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalField {
    mesh_id: u64,
    values: Vec<f64>,
}

impl NodalField {
    pub fn new(mesh: &SlabMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::invalid(format!(
                "field has {} values but mesh has {} nodes",
                values.len(),
                mesh.n_nodes()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("field value at node {i} is not finite")));
        }
        Ok(NodalField {
            mesh_id: mesh.id(),
            values,
        })
    }

    pub fn constant(mesh: &SlabMesh, c: f64) -> Self {
        NodalField {
            mesh_id: mesh.id(),
            values: vec![c; mesh.n_nodes()],
        }
    }

    pub fn from_fn(mesh: &SlabMesh, f: impl Fn(&[f64]) -> f64) -> Self {
        NodalField {
            mesh_id: mesh.id(),
            values: (0..mesh.n_nodes()).map(|i| f(mesh.node(i))).collect(),
        }
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Error unless the field lives on `mesh`.
    pub fn check_on(&self, mesh: &SlabMesh, what: &str) -> Result<()> {
        if self.mesh_id != mesh.id() || self.values.len() != mesh.n_nodes() {
            return Err(Error::invalid(format!("{what} does not live on the expected mesh")));
        }
        Ok(())
    }

    /// Value of the P1 interpolant at the centroid of each cell.
    pub fn cell_means(&self, mesh: &SlabMesh) -> Vec<f64> {
        (0..mesh.n_cells())
            .map(|c| {
                let cell = mesh.cell(c);
                cell.iter().map(|&v| self.values[v]).sum::<f64>() / cell.len() as f64
            })
            .collect()
    }
}

/// Element mass matrix entry for a `k`-simplex of measure `measure`.
#[inline]
pub fn p1_mass_entry(measure: f64, k: usize, diagonal: bool) -> f64 {
    let base = measure / ((k + 1) * (k + 2)) as f64;
    if diagonal {
        2.0 * base
    } else {
        base
    }
}

/// Symmetric 2x2/3x3 correlation tensor, stored row-major `dim x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dim: usize,
    entries: Vec<f64>,
}

impl Tensor {
    pub fn isotropic(dim: usize, value: f64) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for k in 0..dim {
            entries[k * dim + k] = value;
        }
        Tensor { dim, entries }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let dim = values.len();
        let mut entries = vec![0.0; dim * dim];
        for (k, v) in values.iter().enumerate() {
            entries[k * dim + k] = *v;
        }
        Tensor { dim, entries }
    }

    pub fn from_row_major(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::invalid("tensor entry count does not match dimension"));
        }
        Ok(Tensor { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Symmetric and positive definite (checked by Cholesky).
    pub fn is_spd(&self) -> bool {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                if self.get(i, j) != self.get(j, i) {
                    return false;
                }
            }
        }
        let m = nalgebra::DMatrix::from_row_slice(d, d, &self.entries);
        m.cholesky().is_some() && self.entries.iter().all(|v| v.is_finite())
    }

    /// Geometric-mean scalar `det(T)^(1/d)`; equals the value for isotropic tensors.
    pub fn scalar(&self) -> f64 {
        let m = nalgebra::DMatrix::from_row_slice(self.dim, self.dim, &self.entries);
        m.determinant().powf(1.0 / self.dim as f64)
    }

    fn quad(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += a[i] * self.entries[i * d + j] * b[j];
            }
        }
        s
    }
}

/// Sparsity pattern of a mesh's P1 matrices with per-cell scatter slots,
/// plus cached unit-coefficient element stiffness and mass matrices.
#[derive(Clone, Debug)]
pub struct Assembler {
    n: usize,
    local: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// `slots[c*local*local + a*local + b]` is the value index of `(cell[a], cell[b])`.
    slots: Vec<usize>,
    unit_stiffness: Vec<f64>,
    unit_mass: Vec<f64>,
}

impl Assembler {
    pub fn new(mesh: &SlabMesh) -> Self {
        let d = mesh.dim();
        let local = d + 1;
        let n = mesh.n_nodes();
        let mut triplets = Vec::with_capacity(mesh.n_cells() * local * local);
        for c in 0..mesh.n_cells() {
            let cell = mesh.cell(c);
            for &i in cell {
                for &j in cell {
                    triplets.push((i, j, 0.0));
                }
            }
        }
        let pattern = SparseSymMatrix::from_triplets(n, &triplets);
        let (row_ptr, col_idx) = pattern_parts(&pattern);
        let mut slots = Vec::with_capacity(triplets.len());
        let mut unit_stiffness = Vec::with_capacity(triplets.len());
        let mut unit_mass = Vec::with_capacity(triplets.len());
        for c in 0..mesh.n_cells() {
            let cell = mesh.cell(c);
            let geo = mesh.cell_geometry(c);
            for a in 0..local {
                for b in 0..local {
                    let (i, j) = (cell[a], cell[b]);
                    let r = &col_idx[row_ptr[i]..row_ptr[i + 1]];
                    slots.push(row_ptr[i] + r.binary_search(&j).expect("pattern contains cell pairs"));
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    let k: f64 = (0..d).map(|x| geo.grads[lo][x] * geo.grads[hi][x]).sum();
                    unit_stiffness.push(geo.volume * k);
                    unit_mass.push(p1_mass_entry(geo.volume, d, a == b));
                }
            }
        }
        Assembler {
            n,
            local,
            row_ptr,
            col_idx,
            slots,
            unit_stiffness,
            unit_mass,
        }
    }

    fn scatter(&self, cell_coef: &[f64], local_values: &[f64]) -> SparseSymMatrix {
        let mut values = vec![0.0; self.col_idx.len()];
        let ll = self.local * self.local;
        for (c, &coef) in cell_coef.iter().enumerate() {
            let base = c * ll;
            for k in 0..ll {
                values[self.slots[base + k]] += coef * local_values[base + k];
            }
        }
        SparseSymMatrix::from_parts(self.n, self.row_ptr.clone(), self.col_idx.clone(), values)
    }

    /// `sum_T coef_T * K_T` with identity tensor.
    pub fn stiffness(&self, cell_coef: &[f64]) -> SparseSymMatrix {
        self.scatter(cell_coef, &self.unit_stiffness)
    }

    pub fn mass(&self) -> SparseSymMatrix {
        let ones = vec![1.0; self.slots.len() / (self.local * self.local)];
        self.scatter(&ones, &self.unit_mass)
    }

    /// Pattern of the assembled matrices (all are built on it).
    pub fn pattern(&self) -> SparseSymMatrix {
        SparseSymMatrix::from_parts(self.n, self.row_ptr.clone(), self.col_idx.clone(), vec![0.0; self.col_idx.len()])
    }

    /// Value index of entry `(i, j)` in the pattern.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let r = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        r.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }
}

fn pattern_parts(m: &SparseSymMatrix) -> (Vec<usize>, Vec<usize>) {
    let mut row_ptr = vec![0usize; m.dim() + 1];
    let mut col_idx = Vec::with_capacity(m.nnz());
    for i in 0..m.dim() {
        col_idx.extend(m.row(i).map(|(j, _)| j));
        row_ptr[i + 1] = col_idx.len();
    }
    (row_ptr, col_idx)
}

/// Mass matrix `M_ij = int phi_i phi_j`.
pub fn assemble_mass(mesh: &SlabMesh) -> SparseSymMatrix {
    Assembler::new(mesh).mass()
}

/// Stiffness matrix of `-div(exp(a) grad u)` with `exp(a)` taken at cell centroids.
pub fn assemble_stiffness(mesh: &SlabMesh, a: &NodalField) -> Result<SparseSymMatrix> {
    a.check_on(mesh, "conductivity field")?;
    let coef: Vec<f64> = a.cell_means(mesh).into_iter().map(f64::exp).collect();
    Ok(Assembler::new(mesh).stiffness(&coef))
}

/// Stiffness `int coef_T (T grad phi_i) . grad phi_j` with a constant tensor.
pub fn assemble_tensor_stiffness(mesh: &SlabMesh, cell_coef: &[f64], tensor: &Tensor) -> Result<SparseSymMatrix> {
    if tensor.dim() != mesh.dim() {
        return Err(Error::invalid(format!(
            "tensor is {}x{} but mesh dimension is {}",
            tensor.dim(),
            tensor.dim(),
            mesh.dim()
        )));
    }
    let d = mesh.dim();
    let mut triplets = Vec::with_capacity(mesh.n_cells() * (d + 1) * (d + 1));
    for c in 0..mesh.n_cells() {
        let cell = mesh.cell(c);
        let geo = mesh.cell_geometry(c);
        for a in 0..=d {
            for b in 0..=d {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let v = cell_coef[c] * geo.volume * tensor.quad(&geo.grads[lo], &geo.grads[hi]);
                triplets.push((cell[a], cell[b], v));
            }
        }
    }
    Ok(SparseSymMatrix::from_triplets(mesh.n_nodes(), &triplets))
}

/// Mass matrix over the boundary facets of `mesh` with the given tags, scaled by `coef`.
pub fn assemble_facet_mass(mesh: &SlabMesh, tags: &[BoundaryTag], coef: f64) -> SparseSymMatrix {
    let k = mesh.dim() - 1;
    let mut triplets = Vec::new();
    for f in 0..mesh.n_facets() {
        if !tags.contains(&mesh.facet_tag(f)) {
            continue;
        }
        let nodes = mesh.facet(f);
        let measure = mesh.simplex_measure(nodes);
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                triplets.push((i, j, coef * p1_mass_entry(measure, k, a == b)));
            }
        }
    }
    SparseSymMatrix::from_triplets(mesh.n_nodes(), &triplets)
}

/// Precomputed bottom-surface element data for the Robin term `int exp(beta) u v`.
#[derive(Clone, Debug)]
pub struct RobinTerm {
    /// Per surface cell: surface node indices.
    surface_cells: Vec<usize>,
    /// Per surface cell: volume node indices.
    volume_cells: Vec<usize>,
    /// Per surface cell: local mass matrix, row-major.
    local_mass: Vec<f64>,
    local: usize,
    n_volume: usize,
    surface_id: u64,
}

impl RobinTerm {
    pub fn new(volume: &SlabMesh, surface: &SlabMesh) -> Result<Self> {
        if surface.parent_nodes().is_empty() || surface.dim() + 1 != volume.dim() {
            return Err(Error::invalid("Robin term needs a surface extracted from the volume mesh"));
        }
        if surface.parent_nodes().iter().any(|&v| v >= volume.n_nodes()) {
            return Err(Error::invalid("surface does not belong to this volume mesh"));
        }
        let local = surface.dim() + 1;
        let mut surface_cells = Vec::with_capacity(surface.n_cells() * local);
        let mut volume_cells = Vec::with_capacity(surface.n_cells() * local);
        let mut local_mass = Vec::with_capacity(surface.n_cells() * local * local);
        for c in 0..surface.n_cells() {
            let cell = surface.cell(c);
            let measure = surface.cell_geometry(c).volume;
            for a in 0..local {
                for b in 0..local {
                    local_mass.push(p1_mass_entry(measure, surface.dim(), a == b));
                }
            }
            surface_cells.extend_from_slice(cell);
            volume_cells.extend(cell.iter().map(|&v| surface.parent_nodes()[v]));
        }
        Ok(RobinTerm {
            surface_cells,
            volume_cells,
            local_mass,
            local,
            n_volume: volume.n_nodes(),
            surface_id: surface.id(),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.surface_cells.len() / self.local
    }

    pub fn local(&self) -> usize {
        self.local
    }

    pub fn surface_cell(&self, c: usize) -> &[usize] {
        &self.surface_cells[c * self.local..(c + 1) * self.local]
    }

    pub fn volume_cell(&self, c: usize) -> &[usize] {
        &self.volume_cells[c * self.local..(c + 1) * self.local]
    }

    pub fn local_mass(&self, c: usize) -> &[f64] {
        let ll = self.local * self.local;
        &self.local_mass[c * ll..(c + 1) * ll]
    }

    /// `exp` of the centroid value of `beta` on every surface cell.
    pub fn cell_coefficients(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n_cells())
            .map(|c| {
                let cell = self.surface_cell(c);
                (cell.iter().map(|&v| beta[v]).sum::<f64>() / self.local as f64).exp()
            })
            .collect()
    }

    /// `u_T^T M_T p_T` per surface cell, with `u`, `p` volume vectors.
    pub fn cell_products(&self, u: &[f64], p: &[f64]) -> Vec<f64> {
        (0..self.n_cells())
            .map(|c| {
                let cell = self.volume_cell(c);
                let m = self.local_mass(c);
                let mut s = 0.0;
                for a in 0..self.local {
                    for b in 0..self.local {
                        s += u[cell[a]] * m[a * self.local + b] * p[cell[b]];
                    }
                }
                s
            })
            .collect()
    }

    /// Distribute per-cell scalars to surface nodes with weight `1/(k+1)` per vertex.
    pub fn to_nodes(&self, cell_values: &[f64], n_surface: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_surface];
        let w = 1.0 / self.local as f64;
        for (c, &v) in cell_values.iter().enumerate() {
            for &i in self.surface_cell(c) {
                out[i] += w * v;
            }
        }
        out
    }

    /// Robin matrix `sum_T coef_T M_T` embedded in volume indices.
    pub fn matrix(&self, cell_coef: &[f64]) -> SparseSymMatrix {
        let mut triplets = Vec::with_capacity(self.local_mass.len());
        for (c, &coef) in cell_coef.iter().enumerate() {
            let cell = self.volume_cell(c);
            let m = self.local_mass(c);
            for a in 0..self.local {
                for b in 0..self.local {
                    triplets.push((cell[a], cell[b], coef * m[a * self.local + b]));
                }
            }
        }
        SparseSymMatrix::from_triplets(self.n_volume, &triplets)
    }

    pub fn surface_id(&self) -> u64 {
        self.surface_id
    }
}

/// Robin boundary mass `int_{bottom} exp(beta) phi_i phi_j` in volume indices.
pub fn assemble_robin_mass(volume: &SlabMesh, bottom: &SlabMesh, beta: &NodalField) -> Result<SparseSymMatrix> {
    beta.check_on(bottom, "Robin coefficient")?;
    let term = RobinTerm::new(volume, bottom)?;
    Ok(term.matrix(&term.cell_coefficients(beta.values())))
}

/// Neumann load `int_{top} g v` in volume indices.
pub fn assemble_flux_load(volume: &SlabMesh, top: &SlabMesh, g: &NodalField) -> Result<Vec<f64>> {
    g.check_on(top, "flux")?;
    let term = RobinTerm::new(volume, top)?;
    let mut load = vec![0.0; volume.n_nodes()];
    for c in 0..term.n_cells() {
        let s = term.surface_cell(c);
        let v = term.volume_cell(c);
        let m = term.local_mass(c);
        let l = term.local();
        for a in 0..l {
            for b in 0..l {
                load[v[a]] += m[a * l + b] * g.values()[s[b]];
            }
        }
    }
    Ok(load)
}

/// Volume source load `int f v` for the P1 interpolant of `f`.
///
/// The physical model has no volume source; this exists for manufactured-solution checks.
pub fn assemble_volume_load(mesh: &SlabMesh, f: &NodalField) -> Result<Vec<f64>> {
    f.check_on(mesh, "volume source")?;
    Ok(assemble_mass(mesh).matvec(f.values()))
}

/// Free (non-Dirichlet) node bookkeeping.
#[derive(Clone, Debug)]
pub struct DofMap {
    free: Vec<usize>,
    full_to_free: Vec<usize>,
}

impl DofMap {
    pub fn new(constrained: &[bool]) -> Self {
        let free: Vec<usize> = (0..constrained.len()).filter(|&i| !constrained[i]).collect();
        let mut full_to_free = vec![usize::MAX; constrained.len()];
        for (k, &i) in free.iter().enumerate() {
            full_to_free[i] = k;
        }
        DofMap { free, full_to_free }
    }

    /// Every node free.
    pub fn all(n: usize) -> Self {
        Self::new(&vec![false; n])
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn n_full(&self) -> usize {
        self.full_to_free.len()
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn free_index(&self, full: usize) -> Option<usize> {
        match self.full_to_free[full] {
            usize::MAX => None,
            k => Some(k),
        }
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    /// Extend by zero on constrained nodes.
    pub fn extend(&self, reduced: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.full_to_free.len()];
        for (k, &i) in self.free.iter().enumerate() {
            out[i] = reduced[k];
        }
        out
    }
}

/// P1 value of `field` (on `mesh`) at point `p`.
pub fn evaluate_at(mesh: &SlabMesh, field: &NodalField, p: &[f64]) -> Result<f64> {
    field.check_on(mesh, "interpolated field")?;
    let (c, lam) = mesh.locate(p)?;
    Ok(mesh
        .cell(c)
        .iter()
        .enumerate()
        .map(|(k, &v)| lam[k] * field.values()[v])
        .sum())
}

/// P1 interpolation of `field` from `src` onto the nodes of `dst`.
pub fn interpolate_field(src: &SlabMesh, field: &NodalField, dst: &SlabMesh) -> Result<NodalField> {
    field.check_on(src, "source field")?;
    if src.dim() != dst.dim() {
        return Err(Error::invalid("source and destination meshes differ in dimension"));
    }
    let values = (0..dst.n_nodes())
        .map(|i| evaluate_at(src, field, dst.node(i)))
        .collect::<Result<Vec<_>>>()?;
    NodalField::new(dst, values)
}

/// Element matrix check helper: mass matrix of one reference simplex.
pub fn reference_mass(verts: &[[f64; 3]; 4], dim: usize) -> Vec<f64> {
    let geo = simplex_geometry(verts, dim);
    let l = dim + 1;
    let mut m = vec![0.0; l * l];
    for a in 0..l {
        for b in 0..l {
            m[a * l + b] = p1_mass_entry(geo.volume, dim, a == b);
        }
    }
    m
}
