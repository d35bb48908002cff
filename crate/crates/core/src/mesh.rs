//! Structured simplicial meshes of a thin slab and of its boundary surfaces.
//!
//! The slab `[0,L]^(d-1) x [0,H]` is cut into a tensor grid of boxes and every
//! box is split into `d!` simplices following the Kuhn–Freudenthal pattern: one
//! simplex per permutation of the axes, walking from the box's low corner to its
//! high corner one axis at a time. Nodes are numbered lexicographically with `x`
//! fastest, so the bottom surface (`last coordinate = 0`) occupies the first
//! block of node indices and the top surface the last block.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::util::fmt_g17;

/// Part of the slab boundary a facet belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum BoundaryTag {
    Top,
    Bottom,
    Side,
}

impl BoundaryTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Top => "TOP",
            BoundaryTag::Bottom => "BOTTOM",
            BoundaryTag::Side => "SIDE",
        }
    }
}

/// Whether a mesh is a full slab or a surface extracted from one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshKind {
    Slab,
    Surface(BoundaryTag),
}

/// Simplicial mesh of a box-shaped domain with tagged boundary facets.
///
/// Both slabs and their extracted top/bottom surfaces use this type; the
/// surfaces are `(d-1)`-dimensional meshes whose boundary facets are all tagged
/// [`BoundaryTag::Side`].
#[derive(Clone, Debug)]
pub struct SlabMesh {
    dim: usize,
    kind: MeshKind,
    counts: Vec<usize>,
    lengths: Vec<f64>,
    coords: Vec<f64>,
    cells: Vec<usize>,
    facets: Vec<usize>,
    facet_tags: Vec<BoundaryTag>,
    bottom_trace: Vec<usize>,
    top_trace: Vec<usize>,
    /// For surfaces: volume index of every surface node.
    parent_nodes: Vec<usize>,
    box_offsets: Vec<usize>,
    box_cells: Vec<usize>,
    id: u64,
}

/// Volume and barycentric-coordinate gradients of one simplex.
#[derive(Clone, Debug)]
pub struct SimplexGeometry {
    pub volume: f64,
    /// `grads[k]` is the gradient of the k-th barycentric coordinate.
    pub grads: [[f64; 3]; 4],
}

impl SlabMesh {
    /// Build the structured slab mesh.
    ///
    /// For `dim == 3` the domain is `[0,L]x[0,L]x[0,H]` with `nx x ny x nz`
    /// boxes; for `dim == 2` it is `[0,L]x[0,H]` with `nx x nz` boxes and `ny`
    /// is ignored.
    pub fn build(nx: usize, ny: usize, nz: usize, length: f64, height: f64, dim: usize) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::invalid(format!("slab dimension must be 2 or 3, got {dim}")));
        }
        if nx == 0 || nz == 0 || (dim == 3 && ny == 0) {
            return Err(Error::invalid("cell counts must be at least 1"));
        }
        if !(length > 0.0 && height > 0.0 && length.is_finite() && height.is_finite()) {
            return Err(Error::invalid(format!(
                "slab lengths must be positive, got L={length}, H={height}"
            )));
        }
        let (counts, lengths) = if dim == 3 {
            (vec![nx, ny, nz], vec![length, length, height])
        } else {
            (vec![nx, nz], vec![length, height])
        };
        Ok(Self::structured(MeshKind::Slab, counts, lengths))
    }

    fn structured(kind: MeshKind, counts: Vec<usize>, lengths: Vec<f64>) -> Self {
        let dim = counts.len();
        let npts: Vec<usize> = counts.iter().map(|n| n + 1).collect();
        let n_nodes: usize = npts.iter().product();
        let mut coords = Vec::with_capacity(n_nodes * dim);
        for flat in 0..n_nodes {
            let idx = unflatten(flat, &npts);
            for k in 0..dim {
                coords.push(lengths[k] * idx[k] as f64 / counts[k] as f64);
            }
        }

        let perms = permutations(dim);
        let n_boxes: usize = counts.iter().product();
        let mut cells = Vec::with_capacity(n_boxes * perms.len() * (dim + 1));
        let mut box_offsets = Vec::with_capacity(n_boxes + 1);
        let mut box_cells = Vec::with_capacity(n_boxes * perms.len());
        box_offsets.push(0);
        let mut cell_id = 0;
        for b in 0..n_boxes {
            let corner = unflatten(b, &counts);
            for perm in &perms {
                let mut walk = corner.clone();
                let mut simplex = [0usize; 4];
                simplex[0] = flatten(&walk, &npts);
                for (step, &axis) in perm.iter().enumerate() {
                    walk[axis] += 1;
                    simplex[step + 1] = flatten(&walk, &npts);
                }
                let verts = &mut simplex[..=dim];
                if signed_volume(&coords, dim, verts) < 0.0 {
                    verts.swap(dim - 1, dim);
                }
                cells.extend_from_slice(verts);
                box_cells.push(cell_id);
                cell_id += 1;
            }
            box_offsets.push(box_cells.len());
        }

        let mut mesh = SlabMesh {
            dim,
            kind,
            counts,
            lengths,
            coords,
            cells,
            facets: Vec::new(),
            facet_tags: Vec::new(),
            bottom_trace: Vec::new(),
            top_trace: Vec::new(),
            parent_nodes: Vec::new(),
            box_offsets,
            box_cells,
            id: 0,
        };
        mesh.finish();
        mesh
    }

    /// Extract boundary facets, tag them, and fill traces and fingerprint.
    fn finish(&mut self) {
        let dim = self.dim;
        let nf = dim; // nodes per facet
        let mut count: HashMap<[usize; 3], u32> = HashMap::new();
        for c in 0..self.n_cells() {
            let cell = self.cell(c);
            for skip in 0..=dim {
                *count.entry(facet_key(cell, skip)).or_insert(0) += 1;
            }
        }
        let mut facets = Vec::new();
        let mut tags = Vec::new();
        for c in 0..self.n_cells() {
            let cell = self.cell(c).to_vec();
            for skip in 0..=dim {
                if count[&facet_key(&cell, skip)] != 1 {
                    continue;
                }
                let nodes: Vec<usize> = (0..=dim).filter(|&k| k != skip).map(|k| cell[k]).collect();
                debug_assert_eq!(nodes.len(), nf);
                let tag = match self.kind {
                    MeshKind::Surface(_) => BoundaryTag::Side,
                    MeshKind::Slab => {
                        let last = dim - 1;
                        let top = self.lengths[last];
                        if nodes.iter().all(|&n| self.node(n)[last] == 0.0) {
                            BoundaryTag::Bottom
                        } else if nodes.iter().all(|&n| self.node(n)[last] == top) {
                            BoundaryTag::Top
                        } else {
                            BoundaryTag::Side
                        }
                    }
                };
                facets.extend(nodes);
                tags.push(tag);
            }
        }
        self.facets = facets;
        self.facet_tags = tags;

        if self.kind == MeshKind::Slab {
            let last = dim - 1;
            let top = self.lengths[last];
            self.bottom_trace = (0..self.n_nodes()).filter(|&n| self.node(n)[last] == 0.0).collect();
            self.top_trace = (0..self.n_nodes()).filter(|&n| self.node(n)[last] == top).collect();
        }

        let mut hasher = Sha256::new();
        hasher.update(format!("{:?}|{:?}|", self.kind, self.counts));
        for l in &self.lengths {
            hasher.update(l.to_le_bytes());
        }
        let digest = hasher.finalize();
        self.id = u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"));
    }

    /// `(d-1)`-dimensional mesh of the BOTTOM facets, numbered like `bottom_trace`.
    pub fn extract_bottom(&self) -> Result<SlabMesh> {
        self.extract_surface(BoundaryTag::Bottom)
    }

    /// `(d-1)`-dimensional mesh of the TOP facets, numbered like `top_trace`.
    pub fn extract_top(&self) -> Result<SlabMesh> {
        self.extract_surface(BoundaryTag::Top)
    }

    fn extract_surface(&self, tag: BoundaryTag) -> Result<SlabMesh> {
        if self.kind != MeshKind::Slab {
            return Err(Error::invalid("surfaces can only be extracted from a slab mesh"));
        }
        let trace = match tag {
            BoundaryTag::Bottom => &self.bottom_trace,
            BoundaryTag::Top => &self.top_trace,
            BoundaryTag::Side => return Err(Error::invalid("side surfaces are not meshed")),
        };
        let sdim = self.dim - 1;
        let mut local = vec![usize::MAX; self.n_nodes()];
        for (i, &v) in trace.iter().enumerate() {
            local[v] = i;
        }
        let mut coords = Vec::with_capacity(trace.len() * sdim);
        for &v in trace {
            coords.extend_from_slice(&self.node(v)[..sdim]);
        }
        let counts = self.counts[..sdim].to_vec();
        let lengths = self.lengths[..sdim].to_vec();
        let mut cells = Vec::new();
        let mut cell_box = Vec::new();
        for (f, &t) in self.facet_tags.iter().enumerate() {
            if t != tag {
                continue;
            }
            let mut verts: Vec<usize> = self.facet(f).iter().map(|&v| local[v]).collect();
            if signed_volume(&coords, sdim, &verts) < 0.0 {
                let n = verts.len();
                verts.swap(n - 2, n - 1);
            }
            let mut centroid = [0.0; 3];
            for &v in &verts {
                for k in 0..sdim {
                    centroid[k] += coords[v * sdim + k] / verts.len() as f64;
                }
            }
            let idx: Vec<usize> = (0..sdim)
                .map(|k| box_index(centroid[k], lengths[k], counts[k]))
                .collect();
            cell_box.push(flatten(&idx, &counts));
            cells.extend(verts);
        }
        let n_boxes: usize = counts.iter().product();
        let mut order: Vec<usize> = (0..cell_box.len()).collect();
        order.sort_by_key(|&c| (cell_box[c], c));
        let mut box_offsets = vec![0usize; n_boxes + 1];
        for &b in &cell_box {
            box_offsets[b + 1] += 1;
        }
        for b in 0..n_boxes {
            box_offsets[b + 1] += box_offsets[b];
        }
        let mut surface = SlabMesh {
            dim: sdim,
            kind: MeshKind::Surface(tag),
            counts,
            lengths,
            coords,
            cells,
            facets: Vec::new(),
            facet_tags: Vec::new(),
            bottom_trace: Vec::new(),
            top_trace: Vec::new(),
            parent_nodes: trace.clone(),
            box_offsets,
            box_cells: order,
            id: 0,
        };
        surface.finish();
        Ok(surface)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> MeshKind {
        self.kind
    }

    /// Stable fingerprint of the mesh geometry and resolution.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Cell counts per axis.
    pub fn resolution(&self) -> &[usize] {
        &self.counts
    }

    /// Domain extent per axis.
    pub fn extents(&self) -> &[f64] {
        &self.lengths
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn n_facets(&self) -> usize {
        self.facet_tags.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.cells[c * k..(c + 1) * k]
    }

    pub fn facet(&self, f: usize) -> &[usize] {
        &self.facets[f * self.dim..(f + 1) * self.dim]
    }

    pub fn facet_tag(&self, f: usize) -> BoundaryTag {
        self.facet_tags[f]
    }

    /// Indices of facets carrying `tag`.
    pub fn facets_tagged(&self, tag: BoundaryTag) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_facets()).filter(move |&f| self.facet_tags[f] == tag)
    }

    /// Volume node index of every bottom-surface node (slabs only).
    pub fn bottom_trace(&self) -> &[usize] {
        &self.bottom_trace
    }

    /// Volume node index of every top-surface node (slabs only).
    pub fn top_trace(&self) -> &[usize] {
        &self.top_trace
    }

    /// Volume node index of each node of an extracted surface.
    pub fn parent_nodes(&self) -> &[usize] {
        &self.parent_nodes
    }

    /// Nodes lying on any boundary facet with one of the given tags.
    pub fn boundary_nodes(&self, tags: &[BoundaryTag]) -> Vec<bool> {
        let mut mark = vec![false; self.n_nodes()];
        for f in 0..self.n_facets() {
            if tags.contains(&self.facet_tags[f]) {
                for &v in self.facet(f) {
                    mark[v] = true;
                }
            }
        }
        mark
    }

    /// Copy of the vertex coordinates of a simplex given by node indices.
    pub fn vertices(&self, nodes: &[usize]) -> [[f64; 3]; 4] {
        let mut v = [[0.0; 3]; 4];
        for (k, &n) in nodes.iter().enumerate() {
            v[k][..self.dim].copy_from_slice(self.node(n));
        }
        v
    }

    pub fn cell_geometry(&self, c: usize) -> SimplexGeometry {
        simplex_geometry(&self.vertices(self.cell(c)), self.dim)
    }

    /// Measure (length, area, or volume) of a simplex embedded in this mesh,
    /// possibly of lower dimension (e.g. a boundary facet).
    pub fn simplex_measure(&self, nodes: &[usize]) -> f64 {
        let verts = self.vertices(nodes);
        let k = nodes.len() - 1;
        if k == self.dim {
            return simplex_geometry(&verts, k).volume;
        }
        // Gram determinant of the edge vectors.
        let mut e = [[0.0; 3]; 3];
        for i in 0..k {
            for a in 0..3 {
                e[i][a] = verts[i + 1][a] - verts[0][a];
            }
        }
        let mut g = [[0.0; 3]; 3];
        for i in 0..k {
            for j in 0..k {
                g[i][j] = (0..3).map(|a| e[i][a] * e[j][a]).sum();
            }
        }
        let det = match k {
            0 => 1.0,
            1 => g[0][0],
            2 => g[0][0] * g[1][1] - g[0][1] * g[1][0],
            _ => det3(&g),
        };
        det.max(0.0).sqrt() / factorial(k)
    }

    /// Locate `p` and return the containing cell with its barycentric coordinates.
    pub fn locate(&self, p: &[f64]) -> Result<(usize, [f64; 4])> {
        if p.len() != self.dim {
            return Err(Error::invalid(format!(
                "point has {} coordinates, mesh dimension is {}",
                p.len(),
                self.dim
            )));
        }
        let mut idx = Vec::with_capacity(self.dim);
        for k in 0..self.dim {
            let tol = 1e-12 * self.lengths[k].max(1.0);
            if !(p[k] >= -tol && p[k] <= self.lengths[k] + tol) {
                return Err(Error::OutOfDomain { point: p.to_vec() });
            }
            idx.push(box_index(p[k], self.lengths[k], self.counts[k]));
        }
        let b = flatten(&idx, &self.counts);
        let mut best: Option<(usize, [f64; 4], f64)> = None;
        for &c in &self.box_cells[self.box_offsets[b]..self.box_offsets[b + 1]] {
            let lam = barycentric(&self.vertices(self.cell(c)), self.dim, p);
            let worst = lam[..=self.dim].iter().cloned().fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|(_, _, w)| worst > *w) {
                best = Some((c, lam, worst));
            }
        }
        match best {
            Some((c, lam, worst)) if worst >= -1e-9 => Ok((c, lam)),
            _ => Err(Error::OutOfDomain { point: p.to_vec() }),
        }
    }

    /// Plain-text export: header `dim n_nodes n_cells`, node coordinates,
    /// cell tuples, then `facet_node_indices tag` records.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.dim, self.n_nodes(), self.n_cells())?;
        for i in 0..self.n_nodes() {
            let line: Vec<String> = self.node(i).iter().map(|&x| fmt_g17(x)).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        for c in 0..self.n_cells() {
            let line: Vec<String> = self.cell(c).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        for f in 0..self.n_facets() {
            let line: Vec<String> = self.facet(f).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{} {}", line.join(" "), self.facet_tags[f].as_str())?;
        }
        Ok(())
    }
}

fn facet_key(cell: &[usize], skip: usize) -> [usize; 3] {
    let mut key = [usize::MAX; 3];
    let mut n = 0;
    for (k, &v) in cell.iter().enumerate() {
        if k != skip {
            key[n] = v;
            n += 1;
        }
    }
    key[..n].sort_unstable();
    key
}

fn box_index(x: f64, length: f64, count: usize) -> usize {
    let i = (x / length * count as f64).floor();
    if i < 0.0 {
        0
    } else {
        (i as usize).min(count - 1)
    }
}

fn unflatten(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .map(|&d| {
            let i = flat % d;
            flat /= d;
            i
        })
        .collect()
}

fn flatten(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).rev().fold(0, |acc, (&i, &d)| acc * d + i)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            prefix.push(v);
            rec(prefix, rest, out);
            prefix.pop();
            rest.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..n).collect(), &mut out);
    out
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn det3(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn signed_volume(coords: &[f64], dim: usize, verts: &[usize]) -> f64 {
    let mut j = [[0.0; 3]; 3];
    for r in 0..dim {
        for c in 0..dim {
            j[r][c] = coords[verts[c + 1] * dim + r] - coords[verts[0] * dim + r];
        }
    }
    let det = match dim {
        1 => j[0][0],
        2 => j[0][0] * j[1][1] - j[0][1] * j[1][0],
        _ => det3(&j),
    };
    det / factorial(dim)
}

/// Volume and barycentric gradients of a `dim`-simplex given its vertices.
pub fn simplex_geometry(verts: &[[f64; 3]; 4], dim: usize) -> SimplexGeometry {
    // Jacobian columns are edge vectors; grads of lambda_1..lambda_d are rows of J^{-1}.
    let mut j = [[0.0; 3]; 3];
    for r in 0..dim {
        for c in 0..dim {
            j[r][c] = verts[c + 1][r] - verts[0][r];
        }
    }
    let (det, inv) = invert_small(&j, dim);
    let mut grads = [[0.0; 3]; 4];
    for k in 0..dim {
        for a in 0..dim {
            grads[k + 1][a] = inv[k][a];
            grads[0][a] -= inv[k][a];
        }
    }
    SimplexGeometry {
        volume: det.abs() / factorial(dim),
        grads,
    }
}

fn invert_small(j: &[[f64; 3]; 3], dim: usize) -> (f64, [[f64; 3]; 3]) {
    let mut inv = [[0.0; 3]; 3];
    match dim {
        1 => {
            inv[0][0] = 1.0 / j[0][0];
            (j[0][0], inv)
        }
        2 => {
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            inv[0][0] = j[1][1] / det;
            inv[0][1] = -j[0][1] / det;
            inv[1][0] = -j[1][0] / det;
            inv[1][1] = j[0][0] / det;
            (det, inv)
        }
        _ => {
            let det = det3(j);
            for r in 0..3 {
                for c in 0..3 {
                    // cofactor transpose
                    let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
                    let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
                    inv[r][c] = (j[r1][c1] * j[r2][c2] - j[r1][c2] * j[r2][c1]) / det;
                }
            }
            (det, inv)
        }
    }
}

/// Barycentric coordinates of `p` in the simplex `verts`.
pub fn barycentric(verts: &[[f64; 3]; 4], dim: usize, p: &[f64]) -> [f64; 4] {
    let mut j = [[0.0; 3]; 3];
    for r in 0..dim {
        for c in 0..dim {
            j[r][c] = verts[c + 1][r] - verts[0][r];
        }
    }
    let (_, inv) = invert_small(&j, dim);
    let mut lam = [0.0; 4];
    let mut rest = 0.0;
    for k in 0..dim {
        let mut s = 0.0;
        for a in 0..dim {
            s += inv[k][a] * (p[a] - verts[0][a]);
        }
        lam[k + 1] = s;
        rest += s;
    }
    lam[0] = 1.0 - rest;
    lam
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_counts() {
        let m = SlabMesh::build(2, 2, 1, 1.0, 0.01, 3).unwrap();
        assert_eq!(m.n_nodes(), 18);
        assert_eq!(m.n_cells(), 24);
        assert_eq!(m.bottom_trace().len(), 9);
        let m2 = SlabMesh::build(4, 0, 3, 2.0, 0.5, 2).unwrap();
        assert_eq!(m2.n_nodes(), 20);
        assert_eq!(m2.n_cells(), 24);
        assert_eq!(m2.bottom_trace().len(), 5);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(SlabMesh::build(0, 2, 2, 1.0, 1.0, 3), Err(Error::InvalidArgument(_))));
        assert!(matches!(SlabMesh::build(2, 2, 2, -1.0, 1.0, 3), Err(Error::InvalidArgument(_))));
        assert!(matches!(SlabMesh::build(2, 2, 2, 1.0, 0.0, 3), Err(Error::InvalidArgument(_))));
        assert!(matches!(SlabMesh::build(2, 2, 2, 1.0, 1.0, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn volumes_positive_and_sum_to_box() {
        for (dim, expect) in [(2usize, 0.7 * 0.2), (3, 0.7 * 0.7 * 0.2)] {
            let m = SlabMesh::build(3, 4, 2, 0.7, 0.2, dim).unwrap();
            let total: f64 = (0..m.n_cells())
                .map(|c| {
                    let g = m.cell_geometry(c);
                    assert!(g.volume > 0.0);
                    g.volume
                })
                .sum();
            assert!((total - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn barycentric_gradients_sum_to_zero() {
        let m = SlabMesh::build(2, 2, 2, 1.0, 0.3, 3).unwrap();
        for c in 0..m.n_cells() {
            let g = m.cell_geometry(c);
            for a in 0..3 {
                let s: f64 = (0..4).map(|k| g.grads[k][a]).sum();
                assert!(s.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn surface_of_2d_slab_is_an_edge_mesh() {
        let m = SlabMesh::build(5, 0, 2, 1.0, 0.1, 2).unwrap();
        let b = m.extract_bottom().unwrap();
        assert_eq!(b.dim(), 1);
        assert_eq!(b.n_nodes(), 6);
        assert_eq!(b.n_cells(), 5);
        assert_eq!(b.n_facets(), 2);
    }

    #[test]
    fn locate_rejects_outside_points() {
        let m = SlabMesh::build(3, 3, 2, 1.0, 0.1, 3).unwrap();
        assert!(m.locate(&[0.5, 0.5, 0.1]).is_ok());
        assert!(m.locate(&[1.0 + 1e-13, 0.0, 0.0]).is_ok());
        match m.locate(&[1.1, 0.5, 0.05]) {
            Err(Error::OutOfDomain { point }) => assert_eq!(point, vec![1.1, 0.5, 0.05]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
