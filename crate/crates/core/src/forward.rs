//! Parameter-to-observable map for the Robin slab problem
//!
//! ```text
//!   -div(exp(a) grad u) = 0          in the slab
//!   exp(a) du/dn = g                 on the top
//!   exp(a) du/dn + exp(beta) u = 0   on the bottom
//!   u = 0                            on the sides
//! ```
//!
//! together with its adjoint gradient and Gauss-Newton Hessian action. The
//! boundary integrals use the same centroid rule for `exp(beta)` as the
//! forward operator, so the gradient is the exact derivative of the discrete
//! objective.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{Assembler, DofMap, NodalField, RobinTerm};
use crate::mesh::{BoundaryTag, SlabMesh};
use crate::sparse::{SparseSymMatrix, SpdSolver};
use crate::util::dot;

/// Point evaluation of P1 fields at measurement locations on the top surface.
#[derive(Clone, Debug)]
pub struct ObservationOperator {
    points: Vec<Vec<f64>>,
    rows: Vec<Vec<(usize, f64)>>,
    n: usize,
}

impl ObservationOperator {
    pub fn new(mesh: &SlabMesh, points: &[Vec<f64>]) -> Result<Self> {
        let d = mesh.dim();
        let height = *mesh.extents().last().expect("mesh has extents");
        let mut rows = Vec::with_capacity(points.len());
        for p in points {
            if p.len() != d {
                return Err(Error::invalid(format!(
                    "observation point {p:?} has {} coordinates, mesh is {d}-dimensional",
                    p.len()
                )));
            }
            if (p[d - 1] - height).abs() > 1e-12 * height.max(1.0) {
                return Err(Error::invalid(format!("observation point {p:?} is not on the top surface")));
            }
            let (c, lam) = mesh.locate(p)?;
            let mut row: Vec<(usize, f64)> = mesh
                .cell(c)
                .iter()
                .zip(lam.iter())
                .filter(|(_, &w)| w != 0.0)
                .map(|(&v, &w)| (v, w))
                .collect();
            row.sort_by_key(|&(v, _)| v);
            rows.push(row);
        }
        Ok(ObservationOperator {
            points: points.to_vec(),
            rows,
            n: mesh.n_nodes(),
        })
    }

    pub fn q(&self) -> usize {
        self.rows.len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn row(&self, k: usize) -> &[(usize, f64)] {
        &self.rows[k]
    }

    /// `B u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(v, w)| w * u[v]).sum())
            .collect()
    }

    /// `B^T w`.
    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (row, &wk) in self.rows.iter().zip(w) {
            for &(v, b) in row {
                out[v] += b * wk;
            }
        }
        out
    }

    pub fn observe(&self, u: &NodalField) -> Vec<f64> {
        self.apply(u.values())
    }
}

/// Snapshot of Poisson-solve counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SolveCounter {
    pub forward: u64,
    pub adjoint: u64,
    pub incr_forward: u64,
    pub incr_adjoint: u64,
}

impl SolveCounter {
    pub fn total(&self) -> u64 {
        self.forward + self.adjoint + self.incr_forward + self.incr_adjoint
    }
}

#[derive(Debug, Default)]
struct AtomicCounter([AtomicU64; 4]);

impl AtomicCounter {
    fn bump(&self, k: usize) {
        self.0[k].fetch_add(1, Ordering::Relaxed);
    }

    fn get(&self) -> SolveCounter {
        let v = |k: usize| self.0[k].load(Ordering::Relaxed);
        SolveCounter {
            forward: v(0),
            adjoint: v(1),
            incr_forward: v(2),
            incr_adjoint: v(3),
        }
    }
}

/// Gaussian total-error model: mean shift `nu_*` and covariance `Gamma_nu`.
#[derive(Clone, Debug)]
pub struct ErrorModel {
    mean_shift: Vec<f64>,
    covariance: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl ErrorModel {
    /// Build from a mean shift and a symmetric covariance; eigenvalues are
    /// floored at `1e-12 * trace` so the result is always positive definite.
    pub fn new(mean_shift: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let q = mean_shift.len();
        if covariance.nrows() != q || covariance.ncols() != q {
            return Err(Error::invalid(format!(
                "covariance is {}x{}, mean shift has length {q}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean_shift.iter().any(|x| !x.is_finite()) || covariance.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("error model contains non-finite entries"));
        }
        let sym = (&covariance + covariance.transpose()) * 0.5;
        let trace = sym.trace();
        if !(trace > 0.0) {
            return Err(Error::invalid("error covariance must have positive trace"));
        }
        let floor = 1e-12 * trace;
        let eig = sym.clone().symmetric_eigen();
        let covariance = if eig.eigenvalues.min() < floor {
            let lam = eig.eigenvalues.map(|l| l.max(floor));
            &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose()
        } else {
            sym
        };
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numerical("error covariance factorization", "matrix not positive definite"))?;
        Ok(ErrorModel {
            mean_shift,
            covariance,
            chol,
        })
    }

    /// Zero-mean white noise with standard deviation `delta`.
    pub fn noise_only(q: usize, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("noise level must be positive, got {delta}")));
        }
        Self::new(vec![0.0; q], DMatrix::identity(q, q) * (delta * delta))
    }

    pub fn q(&self) -> usize {
        self.mean_shift.len()
    }

    pub fn mean_shift(&self) -> &[f64] {
        &self.mean_shift
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// `Gamma_nu^{-1} r`.
    pub fn apply_inverse(&self, r: &[f64]) -> Vec<f64> {
        self.chol.solve(&DVector::from_column_slice(r)).as_slice().to_vec()
    }

    /// `Gamma_nu^{-1/2} r` using the Cholesky factor.
    pub fn whiten(&self, r: &[f64]) -> Vec<f64> {
        let l = self.chol.l();
        l.solve_lower_triangular(&DVector::from_column_slice(r))
            .expect("Cholesky factor is nonsingular")
            .as_slice()
            .to_vec()
    }

    /// Residual `f - d + nu_*`.
    pub fn residual(&self, predicted: &[f64], data: &[f64]) -> Vec<f64> {
        predicted
            .iter()
            .zip(data)
            .zip(&self.mean_shift)
            .map(|((f, d), m)| f - d + m)
            .collect()
    }

    /// `1/2 |r|^2_{Gamma_nu^{-1}}`.
    pub fn cost(&self, r: &[f64]) -> f64 {
        let w = self.whiten(r);
        0.5 * dot(&w, &w)
    }
}

/// Geometry-level data shared by every forward model on one volume mesh:
/// element caches, boundary terms, Dirichlet bookkeeping, the flux load and
/// the observation operator.
#[derive(Debug)]
pub struct SlabProblem {
    volume: SlabMesh,
    bottom: SlabMesh,
    top: SlabMesh,
    assembler: Assembler,
    robin: RobinTerm,
    dofs: DofMap,
    flux: NodalField,
    load: Vec<f64>,
    obs: ObservationOperator,
}

impl SlabProblem {
    /// `flux` gives `g` at top-surface coordinates (the slab coordinates without the last one).
    pub fn new(volume: SlabMesh, points: &[Vec<f64>], flux: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let bottom = volume.extract_bottom()?;
        let top = volume.extract_top()?;
        let g = NodalField::from_fn(&top, flux);
        let load = crate::fem::assemble_flux_load(&volume, &top, &g)?;
        let robin = RobinTerm::new(&volume, &bottom)?;
        let dofs = DofMap::new(&volume.boundary_nodes(&[BoundaryTag::Side]));
        let obs = ObservationOperator::new(&volume, points)?;
        let assembler = Assembler::new(&volume);
        Ok(SlabProblem {
            volume,
            bottom,
            top,
            assembler,
            robin,
            dofs,
            flux: g,
            load,
            obs,
        })
    }

    /// Constant unit flux on the top.
    pub fn with_unit_flux(volume: SlabMesh, points: &[Vec<f64>]) -> Result<Self> {
        Self::new(volume, points, |_| 1.0)
    }

    pub fn volume(&self) -> &SlabMesh {
        &self.volume
    }

    /// The parameter mesh (bottom surface).
    pub fn bottom(&self) -> &SlabMesh {
        &self.bottom
    }

    pub fn top(&self) -> &SlabMesh {
        &self.top
    }

    pub fn flux(&self) -> &NodalField {
        &self.flux
    }

    pub fn observation(&self) -> &ObservationOperator {
        &self.obs
    }

    pub fn q(&self) -> usize {
        self.obs.q()
    }

    /// Forward model with conductivity `exp(a)`.
    pub fn model(self: &Arc<Self>, a: &NodalField) -> Result<ForwardModel> {
        a.check_on(&self.volume, "conductivity field")?;
        let coef: Vec<f64> = a.cell_means(&self.volume).into_iter().map(f64::exp).collect();
        Ok(ForwardModel {
            problem: Arc::clone(self),
            stiffness: self.assembler.stiffness(&coef),
            counter: AtomicCounter::default(),
        })
    }
}

/// Forward model at a fixed conductivity; counts every Poisson solve.
#[derive(Debug)]
pub struct ForwardModel {
    problem: Arc<SlabProblem>,
    stiffness: SparseSymMatrix,
    counter: AtomicCounter,
}

/// Factorized system `K(a) + R(beta)` with the forward solution at `beta`.
///
/// All four solve types at this `beta` reuse the same factorization.
#[derive(Debug)]
pub struct PoissonState {
    beta: Vec<f64>,
    cell_coef: Vec<f64>,
    solver: SpdSolver,
    u: Vec<f64>,
}

impl PoissonState {
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Forward solution on the volume nodes.
    pub fn u(&self) -> &[f64] {
        &self.u
    }
}

impl ForwardModel {
    pub fn problem(&self) -> &Arc<SlabProblem> {
        &self.problem
    }

    pub fn n_param(&self) -> usize {
        self.problem.bottom.n_nodes()
    }

    pub fn q(&self) -> usize {
        self.problem.q()
    }

    pub fn counts(&self) -> SolveCounter {
        self.counter.get()
    }

    fn solve_full(&self, state: &PoissonState, rhs: &[f64]) -> Result<Vec<f64>> {
        let dofs = &self.problem.dofs;
        Ok(dofs.extend(&state.solver.solve(&dofs.restrict(rhs))?))
    }

    /// Assemble and factor the system at `beta`, then solve the forward problem.
    pub fn linearize(&self, beta: &[f64]) -> Result<PoissonState> {
        if beta.len() != self.n_param() {
            return Err(Error::invalid(format!(
                "beta has length {}, parameter mesh has {} nodes",
                beta.len(),
                self.n_param()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::numerical("forward solve", "Robin coefficient is not finite"));
        }
        let p = &self.problem;
        let cell_coef = p.robin.cell_coefficients(beta);
        if cell_coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::numerical("forward solve", "exp(beta) overflows"));
        }
        let a = self.stiffness.add(&p.robin.matrix(&cell_coef));
        let solver = SpdSolver::new(&a.restrict(p.dofs.free()))?;
        let mut state = PoissonState {
            beta: beta.to_vec(),
            cell_coef,
            solver,
            u: Vec::new(),
        };
        state.u = self.solve_full(&state, &p.load)?;
        self.counter.bump(0);
        Ok(state)
    }

    /// Forward solution `u` at `beta` on the volume mesh.
    pub fn forward_solve(&self, beta: &NodalField) -> Result<NodalField> {
        beta.check_on(&self.problem.bottom, "Robin coefficient")?;
        let state = self.linearize(beta.values())?;
        NodalField::new(&self.problem.volume, state.u)
    }

    /// `B u` at a linearization state.
    pub fn observe(&self, state: &PoissonState) -> Vec<f64> {
        self.problem.obs.apply(&state.u)
    }

    /// Parameter-to-observable map `f(beta)`.
    pub fn evaluate(&self, beta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.observe(&self.linearize(beta)?))
    }

    /// Data-misfit cost `1/2 |B u - d + nu_*|^2_{Gamma_nu^{-1}}`.
    pub fn misfit_cost(&self, state: &PoissonState, data: &[f64], err: &ErrorModel) -> Result<f64> {
        self.check_data(data, err)?;
        Ok(err.cost(&err.residual(&self.observe(state), data)))
    }

    fn check_data(&self, data: &[f64], err: &ErrorModel) -> Result<()> {
        if data.len() != self.q() || err.q() != self.q() {
            return Err(Error::invalid(format!(
                "data length {} and error model size {} must equal the observation count {}",
                data.len(),
                err.q(),
                self.q()
            )));
        }
        Ok(())
    }

    /// Pair an adjoint-like solution `p` with the forward state: entries
    /// `sum_T exp(beta_T)/(k+1) * (u^T M_T p)` at the vertices of each bottom cell.
    fn boundary_pairing(&self, state: &PoissonState, p: &[f64]) -> Vec<f64> {
        let robin = &self.problem.robin;
        let cells: Vec<f64> = robin
            .cell_products(&state.u, p)
            .iter()
            .zip(&state.cell_coef)
            .map(|(s, c)| s * c)
            .collect();
        robin.to_nodes(&cells, self.n_param())
    }

    /// Misfit cost and its gradient as a dual (un-Riesz-mapped) bottom vector.
    ///
    /// Performs one adjoint solve.
    pub fn misfit_gradient(&self, state: &PoissonState, data: &[f64], err: &ErrorModel) -> Result<(f64, Vec<f64>)> {
        self.check_data(data, err)?;
        let r = err.residual(&self.observe(state), data);
        let cost = err.cost(&r);
        let w = err.apply_inverse(&r);
        let rhs: Vec<f64> = self.problem.obs.apply_transpose(&w).iter().map(|x| -x).collect();
        let p = self.solve_full(state, &rhs)?;
        self.counter.bump(1);
        Ok((cost, self.boundary_pairing(state, &p)))
    }

    /// Incremental forward solution `u_hat` for a direction `beta_hat`.
    pub fn incremental_forward(&self, state: &PoissonState, beta_hat: &[f64]) -> Result<Vec<f64>> {
        if beta_hat.len() != self.n_param() {
            return Err(Error::invalid("direction length does not match the parameter mesh"));
        }
        let robin = &self.problem.robin;
        let l = robin.local();
        let mut rhs = vec![0.0; state.u.len()];
        for c in 0..robin.n_cells() {
            let s = robin.surface_cell(c);
            let hat_c = s.iter().map(|&i| beta_hat[i]).sum::<f64>() / l as f64;
            let coef = state.cell_coef[c] * hat_c;
            if coef == 0.0 {
                continue;
            }
            let v = robin.volume_cell(c);
            let m = robin.local_mass(c);
            for a in 0..l {
                let mut acc = 0.0;
                for b in 0..l {
                    acc += m[a * l + b] * state.u[v[b]];
                }
                rhs[v[a]] -= coef * acc;
            }
        }
        let u_hat = self.solve_full(state, &rhs)?;
        self.counter.bump(2);
        Ok(u_hat)
    }

    /// `F beta_hat = B u_hat`.
    pub fn linearized_obs_action(&self, state: &PoissonState, beta_hat: &[f64]) -> Result<Vec<f64>> {
        Ok(self.problem.obs.apply(&self.incremental_forward(state, beta_hat)?))
    }

    /// Dual vector `g` with `w^T F beta_hat = g^T beta_hat`; the mass-weighted
    /// adjoint is `M^{-1} g`. Performs one incremental adjoint solve.
    pub fn obs_adjoint_action(&self, state: &PoissonState, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.q() {
            return Err(Error::invalid("observation-space vector has the wrong length"));
        }
        let rhs: Vec<f64> = self.problem.obs.apply_transpose(w).iter().map(|x| -x).collect();
        let p = self.solve_full(state, &rhs)?;
        self.counter.bump(3);
        Ok(self.boundary_pairing(state, &p))
    }

    /// Gauss-Newton misfit-Hessian action `F* Gamma_nu^{-1} F beta_hat` as a dual vector.
    pub fn gn_hessian_action(&self, state: &PoissonState, beta_hat: &[f64], err: &ErrorModel) -> Result<Vec<f64>> {
        if err.q() != self.q() {
            return Err(Error::invalid("error model size does not match the observation count"));
        }
        let f = self.linearized_obs_action(state, beta_hat)?;
        self.obs_adjoint_action(state, &err.apply_inverse(&f))
    }
}
