//! Symmetric sparse matrices and SPD solvers.
//!
//! The direct path is an envelope (profile) Cholesky factorization under a
//! reverse Cuthill–McKee ordering; on the thin structured slabs used here the
//! envelope is narrow and the factorization is cheap. Systems larger than
//! [`DIRECT_LIMIT`] fall back to Jacobi-preconditioned conjugate gradients.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::util::{dot, norm2};

/// Largest system size factorized directly by default.
pub const DIRECT_LIMIT: usize = 30_000;

/// Relative residual target of the iterative fallback.
pub const CG_TOLERANCE: f64 = 1e-12;

/// Symmetric matrix in compressed-row storage holding both triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Assemble from `(row, col, value)` triplets; duplicates are summed in
    /// input order so the result is reproducible bit for bit.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&t| (triplets[t].0, triplets[t].1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for &t in &order {
            let (r, c, v) = triplets[t];
            assert!(r < n && c < n, "triplet ({r},{c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseSymMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Build from an existing pattern with fresh values.
    pub(crate) fn from_parts(n: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(row_ptr.len(), n + 1);
        debug_assert_eq!(col_idx.len(), values.len());
        SparseSymMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseSymMatrix {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match cols.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "matvec dimension mismatch");
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `x^T A y`
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.matvec(y))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Sum of all entries.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self + other`; patterns are merged.
    pub fn add(&self, other: &SparseSymMatrix) -> Self {
        assert_eq!(self.n, other.n, "matrix dimension mismatch");
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(col_idx.capacity());
        for i in 0..self.n {
            let mut a = self.row(i).peekable();
            let mut b = other.row(i).peekable();
            loop {
                let next = match (a.peek(), b.peek()) {
                    (None, None) => break,
                    (Some(_), None) => a.next().expect("peeked"),
                    (None, Some(_)) => b.next().expect("peeked"),
                    (Some(&(ja, va)), Some(&(jb, vb))) => {
                        if ja == jb {
                            a.next();
                            b.next();
                            (ja, va + vb)
                        } else if ja < jb {
                            a.next().expect("peeked")
                        } else {
                            b.next().expect("peeked")
                        }
                    }
                };
                col_idx.push(next.0);
                values.push(next.1);
            }
            row_ptr[i + 1] = col_idx.len();
        }
        SparseSymMatrix {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Principal submatrix on the rows/columns listed in `keep` (ascending).
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut row_ptr = vec![0usize; keep.len() + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for (new, &old) in keep.iter().enumerate() {
            for (j, v) in self.row(old) {
                if map[j] != usize::MAX {
                    col_idx.push(map[j]);
                    values.push(v);
                }
            }
            row_ptr[new + 1] = col_idx.len();
        }
        SparseSymMatrix {
            n: keep.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Exact (bitwise) equality of every `(i,j)` and `(j,i)` pair.
    pub fn is_exactly_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }
}

/// Reverse Cuthill–McKee ordering; `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseSymMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(a, seed, &degree);
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = a.row(v).map(|(j, _)| j).filter(|&j| !visited[j]).collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(a: &SparseSymMatrix, seed: usize, degree: &[usize]) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(a, node);
        let max_level = *levels.iter().filter(|&&l| l != usize::MAX).max().unwrap_or(&0);
        if max_level <= ecc && ecc > 0 {
            break;
        }
        ecc = max_level;
        node = (0..levels.len())
            .filter(|&i| levels[i] == max_level)
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(node);
    }
    node
}

fn bfs_levels(a: &SparseSymMatrix, start: usize) -> Vec<usize> {
    let mut level = vec![usize::MAX; a.dim()];
    let mut queue = VecDeque::new();
    level[start] = 0;
    queue.push_back(start);
    while let Some(v) = queue.pop_front() {
        for (j, _) in a.row(v) {
            if level[j] == usize::MAX {
                level[j] = level[v] + 1;
                queue.push_back(j);
            }
        }
    }
    level
}

/// Envelope Cholesky factor `P A P^T = L L^T`.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &SparseSymMatrix) -> Result<Self> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first = vec![0usize; n];
        for i in 0..n {
            first[i] = a.row(perm[i]).map(|(j, _)| inv[j]).filter(|&j| j <= i).min().unwrap_or(i);
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut vals = vec![0.0; start[n]];
        for i in 0..n {
            for (j, v) in a.row(perm[i]) {
                let jn = inv[j];
                if jn <= i {
                    vals[start[i] + jn - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let li = &vals[start[i] + k0 - fi..start[i] + j - fi];
                let lj = &vals[start[j] + k0 - fj..start[j] + j - fj];
                let s = vals[start[i] + j - fi] - dot(li, lj);
                let ljj = vals[start[j + 1] - 1];
                vals[start[i] + j - fi] = s / ljj;
            }
            let row = &vals[start[i]..start[i + 1] - 1];
            let d = vals[start[i + 1] - 1] - dot(row, row);
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::numerical(
                    "cholesky factorization",
                    format!("non-positive pivot {d:e} at row {i} of {n}; matrix is not SPD"),
                ));
            }
            vals[start[i + 1] - 1] = d.sqrt();
        }
        Ok(EnvelopeCholesky {
            n,
            perm,
            first,
            start,
            vals,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.vals.len()
    }

    fn lrow(&self, i: usize) -> &[f64] {
        &self.vals[self.start[i]..self.start[i + 1]]
    }

    fn forward(&self, y: &mut [f64]) {
        for i in 0..self.n {
            let row = self.lrow(i);
            let fi = self.first[i];
            let s = dot(&row[..row.len() - 1], &y[fi..i]);
            y[i] = (y[i] - s) / row[row.len() - 1];
        }
    }

    fn backward(&self, y: &mut [f64]) {
        for i in (0..self.n).rev() {
            let row = self.lrow(i);
            let fi = self.first[i];
            y[i] /= row[row.len() - 1];
            let xi = y[i];
            for (k, l) in row[..row.len() - 1].iter().enumerate() {
                y[fi + k] -= l * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "solve dimension mismatch");
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; self.n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    /// `G z` with `G = P^T L`, so that `A = G G^T`.
    pub fn factor_mul(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let fi = self.first[i];
            out[self.perm[i]] = dot(self.lrow(i), &z[fi..=i]);
        }
        out
    }

    /// `G^{-T} z`; for `A = M` this maps white noise to noise with covariance `M^{-1}`.
    pub fn factor_transpose_solve(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n);
        let mut y = z.to_vec();
        self.backward(&mut y);
        let mut x = vec![0.0; self.n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }
}

/// Diagonally preconditioned conjugate gradients.
pub fn jacobi_cg(a: &SparseSymMatrix, b: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let diag = a.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::numerical("conjugate gradient solve", "non-positive diagonal entry"));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iters {
        let ap = a.matvec(&p);
        let curv = dot(&p, &ap);
        if !(curv > 0.0) {
            return Err(Error::numerical("conjugate gradient solve", "matrix is not positive definite"));
        }
        let alpha = rz / curv;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) <= tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::numerical(
        "conjugate gradient solve",
        format!("no convergence to {tol:e} in {max_iters} iterations"),
    ))
}

/// SPD linear solver: direct envelope Cholesky at desk scale, CG above it.
#[derive(Clone, Debug)]
pub enum SpdSolver {
    Direct(EnvelopeCholesky),
    Iterative(SparseSymMatrix),
}

impl SpdSolver {
    pub fn new(a: &SparseSymMatrix) -> Result<Self> {
        Self::with_limit(a, DIRECT_LIMIT)
    }

    pub fn with_limit(a: &SparseSymMatrix, direct_limit: usize) -> Result<Self> {
        if a.dim() <= direct_limit {
            Ok(SpdSolver::Direct(EnvelopeCholesky::factor(a)?))
        } else {
            Ok(SpdSolver::Iterative(a.clone()))
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpdSolver::Direct(f) => f.dim(),
            SpdSolver::Iterative(a) => a.dim(),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            SpdSolver::Direct(f) => Ok(f.solve(b)),
            SpdSolver::Iterative(a) => jacobi_cg(a, b, CG_TOLERANCE, 20 * a.dim().max(10)),
        }
    }

    pub fn cholesky(&self) -> Option<&EnvelopeCholesky> {
        match self {
            SpdSolver::Direct(f) => Some(f),
            SpdSolver::Iterative(_) => None,
        }
    }
}

/// Solve `A x = b` (`A` SPD after Dirichlet elimination).
pub fn solve_spd(a: &SparseSymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    SpdSolver::new(a)?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_1d(n: usize) -> SparseSymMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        SparseSymMatrix::from_triplets(n, &t)
    }

    fn random_spd(n: usize, seed: u64) -> SparseSymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, n as f64));
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                if j != i {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    t.push((i, j, v));
                    t.push((j, i, v));
                }
            }
        }
        SparseSymMatrix::from_triplets(n, &t)
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = laplacian_1d(10);
        assert!(solve_spd(&a, &vec![0.0; 10]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_returns_rhs() {
        let b: Vec<f64> = (0..7).map(|i| i as f64 - 2.5).collect();
        assert_eq!(solve_spd(&SparseSymMatrix::identity(7), &b).unwrap(), b);
    }

    #[test]
    fn recovers_known_solution() {
        let a = random_spd(200, 3);
        let x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.matvec(&x);
        for solver in [SpdSolver::with_limit(&a, 1000).unwrap(), SpdSolver::with_limit(&a, 10).unwrap()] {
            let y = solver.solve(&b).unwrap();
            let err: f64 = norm2(&y.iter().zip(&x).map(|(p, q)| p - q).collect::<Vec<_>>());
            assert!(err <= 1e-10 * norm2(&x), "error {err}");
        }
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let mut t = vec![(0, 0, 1.0), (1, 1, -1.0)];
        t.push((0, 1, 0.0));
        t.push((1, 0, 0.0));
        let a = SparseSymMatrix::from_triplets(2, &t);
        match EnvelopeCholesky::factor(&a) {
            Err(Error::NumericalFailure { op, .. }) => assert_eq!(op, "cholesky factorization"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn factor_reproduces_matrix() {
        let a = random_spd(30, 9);
        let f = EnvelopeCholesky::factor(&a).unwrap();
        let dense = a.to_dense();
        let mut g = DMatrix::zeros(30, 30);
        for j in 0..30 {
            let mut e = vec![0.0; 30];
            e[j] = 1.0;
            let col = f.factor_mul(&e);
            for i in 0..30 {
                g[(i, j)] = col[i];
            }
        }
        let ggt = &g * g.transpose();
        assert!((ggt - &dense).abs().max() < 1e-12 * dense.abs().max());
        // A G^{-T} z = G z
        let z: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let lhs = a.matvec(&f.factor_transpose_solve(&z));
        let rhs = f.factor_mul(&z);
        for i in 0..30 {
            assert!((lhs[i] - rhs[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = random_spd(50, 1);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn add_and_restrict() {
        let a = laplacian_1d(4);
        let s = a.add(&SparseSymMatrix::identity(4));
        assert_eq!(s.get(1, 1), 3.0);
        assert_eq!(s.get(1, 2), -1.0);
        let r = s.restrict(&[1, 3]);
        assert_eq!(r.dim(), 2);
        assert_eq!(r.get(0, 0), 3.0);
        assert_eq!(r.get(0, 1), 0.0);
        assert!(s.is_exactly_symmetric());
    }
}
