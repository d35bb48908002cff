//! Gaussian random-field priors built from the square of an inverse elliptic
//! operator, optionally reweighted so the pointwise variance is flat.
//!
//! With `K = alpha (gamma-stiffness + mass) + kappa (boundary mass)`, `M` the
//! mass matrix and `W` a positive diagonal weight, the prior covariance
//! operator on the mass-weighted space is `Gamma = L L*` with
//! `L = W K^{-1} M` and `L* = K^{-1} W M`. Coefficient vectors then have
//! covariance `W K^{-1} M K^{-1} W`, whose diagonal is `w_i^2 c_i` with
//! `c_i = (K^{-1} M K^{-1})_ii`.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble_facet_mass, assemble_mass, assemble_tensor_stiffness, DofMap, NodalField, Tensor};
use crate::mesh::{BoundaryTag, SlabMesh};
use crate::sparse::{SparseSymMatrix, SpdSolver, DIRECT_LIMIT};
use crate::util::dot;

/// Boundary treatment of the prior operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundaryVariant {
    /// Homogeneous Neumann, unweighted.
    Neumann,
    /// Boundary nodes pinned to the mean.
    Dirichlet,
    /// Homogeneous Robin with coefficient `kappa`, unweighted.
    Robin,
    /// Robin/Neumann operator with the variance-flattening weight.
    Weighted,
}

/// Square root of the mass matrix used to colour white noise.
#[derive(Clone, Debug)]
enum MassFactor {
    Cholesky(SpdSolver),
    /// Row-sum lumped mass, used above the direct-solver limit.
    Lumped(Vec<f64>),
}

/// Marginal standard deviation `Ga(nu) / ((4 pi)^{d/2} gamma^nu alpha^2)`, `nu = 2 - d/2`.
pub fn marginal_std(dim: usize, gamma: f64, alpha: f64) -> f64 {
    let d = dim as f64;
    let nu = 2.0 - d / 2.0;
    statrs::function::gamma::gamma(nu) / ((4.0 * std::f64::consts::PI).powf(d / 2.0) * gamma.powf(nu) * alpha * alpha)
}

#[derive(Debug)]
pub struct EllipticPrior {
    mesh_id: u64,
    dim: usize,
    alpha: f64,
    gamma: Tensor,
    kappa: f64,
    variant: BoundaryVariant,
    mean: NodalField,
    k_op: SparseSymMatrix,
    m_op: SparseSymMatrix,
    dofs: DofMap,
    k_solver: SpdSolver,
    m_solver: SpdSolver,
    mass_factor: MassFactor,
    weight: Vec<f64>,
    sigma: f64,
    unweighted_variance: OnceLock<Vec<f64>>,
}

impl EllipticPrior {
    /// Assemble the prior operator for the given parameters and variant.
    pub fn assemble(
        mesh: &SlabMesh,
        alpha: f64,
        gamma: Tensor,
        kappa: f64,
        mean: NodalField,
        variant: BoundaryVariant,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        if gamma.dim() != mesh.dim() {
            return Err(Error::invalid(format!(
                "correlation tensor is {}-dimensional, parameter domain is {}-dimensional",
                gamma.dim(),
                mesh.dim()
            )));
        }
        if !gamma.is_spd() {
            return Err(Error::invalid("correlation tensor must be symmetric positive definite"));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa must be nonnegative, got {kappa}")));
        }
        mean.check_on(mesh, "prior mean")?;

        let all_tags = [BoundaryTag::Top, BoundaryTag::Bottom, BoundaryTag::Side];
        let m_op = assemble_mass(mesh);
        let mut k_op = assemble_tensor_stiffness(mesh, &vec![alpha; mesh.n_cells()], &gamma)?.add(&m_op.scaled(alpha));
        let robin_kappa = match variant {
            BoundaryVariant::Robin | BoundaryVariant::Weighted => kappa,
            _ => 0.0,
        };
        if robin_kappa > 0.0 {
            k_op = k_op.add(&assemble_facet_mass(mesh, &all_tags, robin_kappa));
        }
        let dofs = if variant == BoundaryVariant::Dirichlet {
            DofMap::new(&mesh.boundary_nodes(&all_tags))
        } else {
            DofMap::all(mesh.n_nodes())
        };
        let k_solver = SpdSolver::new(&k_op.restrict(dofs.free()))?;
        let m_solver = SpdSolver::new(&m_op)?;
        let mass_factor = if mesh.n_nodes() <= DIRECT_LIMIT {
            MassFactor::Cholesky(m_solver.clone())
        } else {
            MassFactor::Lumped(m_op.matvec(&vec![1.0; mesh.n_nodes()]).into_iter().map(f64::sqrt).collect())
        };
        let sigma = marginal_std(mesh.dim(), gamma.scalar(), alpha);

        let mut prior = EllipticPrior {
            mesh_id: mesh.id(),
            dim: mesh.dim(),
            alpha,
            gamma,
            kappa,
            variant,
            mean,
            k_op,
            m_op,
            dofs,
            k_solver,
            m_solver,
            mass_factor,
            weight: vec![1.0; mesh.n_nodes()],
            sigma,
            unweighted_variance: OnceLock::new(),
        };
        if variant == BoundaryVariant::Weighted {
            prior.weight = compute_variance_weight(&prior)?;
        }
        Ok(prior)
    }

    pub fn n(&self) -> usize {
        self.m_op.dim()
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> &Tensor {
        &self.gamma
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn variant(&self) -> BoundaryVariant {
        self.variant
    }

    pub fn mean(&self) -> &NodalField {
        &self.mean
    }

    pub fn operator(&self) -> &SparseSymMatrix {
        &self.k_op
    }

    pub fn mass(&self) -> &SparseSymMatrix {
        &self.m_op
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// Target marginal standard deviation of the weighted field.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Whether white noise is coloured with a lumped mass (large meshes only).
    pub fn uses_lumped_mass(&self) -> bool {
        matches!(self.mass_factor, MassFactor::Lumped(_))
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::invalid(format!(
                "vector has length {}, prior has {} nodes",
                v.len(),
                self.n()
            )));
        }
        Ok(())
    }

    /// `K^{-1} z` (restricted to free nodes for the Dirichlet variant).
    pub fn solve_operator(&self, z: &[f64]) -> Result<Vec<f64>> {
        let r = self.k_solver.solve(&self.dofs.restrict(z))?;
        Ok(self.dofs.extend(&r))
    }

    fn apply_operator(&self, y: &[f64]) -> Result<Vec<f64>> {
        if self.variant == BoundaryVariant::Dirichlet {
            return Err(Error::invalid("the Dirichlet prior has no precision operator"));
        }
        Ok(self.k_op.matvec(y))
    }

    pub fn mass_apply(&self, v: &[f64]) -> Vec<f64> {
        self.m_op.matvec(v)
    }

    pub fn mass_solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.m_solver.solve(v)
    }

    /// Mass-weighted inner product.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        dot(a, &self.m_op.matvec(b))
    }

    /// `L z = W K^{-1} M z`.
    pub fn apply_l(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z)?;
        let x = self.solve_operator(&self.m_op.matvec(z))?;
        Ok(x.iter().zip(&self.weight).map(|(a, w)| a * w).collect())
    }

    /// `L* y = K^{-1} W M y`.
    pub fn apply_l_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        let my = self.m_op.matvec(y);
        let wmy: Vec<f64> = my.iter().zip(&self.weight).map(|(a, w)| a * w).collect();
        self.solve_operator(&wmy)
    }

    /// `L^{-1} y = M^{-1} K W^{-1} y`.
    pub fn apply_l_inv(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        let wy: Vec<f64> = y.iter().zip(&self.weight).map(|(a, w)| a / w).collect();
        self.mass_solve(&self.apply_operator(&wy)?)
    }

    /// `L^{-*} y = M^{-1} W^{-1} K y`.
    pub fn apply_l_adjoint_inv(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        let ky = self.apply_operator(y)?;
        let wky: Vec<f64> = ky.iter().zip(&self.weight).map(|(a, w)| a / w).collect();
        self.mass_solve(&wky)
    }

    /// Prior covariance operator `Gamma z = L L* z`.
    pub fn apply_covariance(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.apply_l(&self.apply_l_adjoint(z)?)
    }

    /// Prior precision operator `Gamma^{-1} y = L^{-*} L^{-1} y`.
    pub fn apply_precision(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.apply_l_adjoint_inv(&self.apply_l_inv(y)?)
    }

    /// Noise with coefficient covariance `M^{-1}` from a standard normal vector.
    pub fn white_noise(&self, xi: &[f64]) -> Vec<f64> {
        match &self.mass_factor {
            MassFactor::Cholesky(s) => s.cholesky().expect("direct mass factor").factor_transpose_solve(xi),
            MassFactor::Lumped(d) => xi.iter().zip(d).map(|(x, s)| x / s).collect(),
        }
    }

    /// `M z_w` for `z_w = white_noise(xi)`, computed without the inverse.
    fn coloured_mass_noise(&self, xi: &[f64]) -> Vec<f64> {
        match &self.mass_factor {
            MassFactor::Cholesky(s) => s.cholesky().expect("direct mass factor").factor_mul(xi),
            MassFactor::Lumped(d) => xi.iter().zip(d).map(|(x, s)| x * s).collect(),
        }
    }

    pub fn standard_normal(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        (0..self.n()).map(|_| StandardNormal.sample(rng)).collect()
    }

    /// Draw `mean + L z_w` with `z_w` mass-white noise, using `rng`.
    pub fn sample_with(&self, rng: &mut impl rand::Rng) -> Result<Vec<f64>> {
        let xi = self.standard_normal(rng);
        let x = self.solve_operator(&self.coloured_mass_noise(&xi))?;
        Ok(x.iter()
            .zip(&self.weight)
            .zip(self.mean.values())
            .map(|((a, w), m)| m + w * a)
            .collect())
    }

    /// Draw a prior sample, deterministic in `seed`.
    pub fn sample(&self, seed: u64) -> Result<Vec<f64>> {
        self.sample_with(&mut ChaCha20Rng::seed_from_u64(seed))
    }

    /// `(1/2) <Gamma^{-1}(x - mean), x - mean>_M` and its mass-weighted gradient.
    pub fn cost_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_len(x)?;
        let y: Vec<f64> = x
            .iter()
            .zip(self.mean.values())
            .zip(&self.weight)
            .map(|((a, m), w)| (a - m) / w)
            .collect();
        let t = self.apply_operator(&y)?;
        let s = self.mass_solve(&t)?;
        let cost = 0.5 * dot(&t, &s);
        let ks = self.apply_operator(&s)?;
        let wks: Vec<f64> = ks.iter().zip(&self.weight).map(|(a, w)| a / w).collect();
        Ok((cost, self.mass_solve(&wks)?))
    }

    /// `c_i = (K^{-1} M K^{-1})_ii`, the pointwise variance without weighting.
    pub fn unweighted_variance(&self) -> Result<&[f64]> {
        if let Some(v) = self.unweighted_variance.get() {
            return Ok(v);
        }
        let n = self.n();
        let values = (0..n)
            .into_par_iter()
            .map(|i| -> Result<f64> {
                if self.dofs.free_index(i).is_none() {
                    return Ok(0.0);
                }
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                let x = self.solve_operator(&e)?;
                Ok(dot(&x, &self.m_op.matvec(&x)))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(self.unweighted_variance.get_or_init(|| values))
    }

    /// Diagonal of the coefficient covariance, `w_i^2 c_i`.
    pub fn pointwise_variance(&self) -> Result<Vec<f64>> {
        Ok(self
            .unweighted_variance()?
            .iter()
            .zip(&self.weight)
            .map(|(c, w)| w * w * c)
            .collect())
    }
}

/// Weight `w_i = sigma / sqrt(c_i)` that makes the pointwise variance equal `sigma^2`.
pub fn compute_variance_weight(prior: &EllipticPrior) -> Result<Vec<f64>> {
    let c = prior.unweighted_variance()?;
    c.iter()
        .enumerate()
        .map(|(i, &ci)| {
            if ci > 0.0 && ci.is_finite() {
                Ok(prior.sigma / ci.sqrt())
            } else {
                Err(Error::numerical(
                    "variance weight",
                    format!("pointwise variance {ci:e} at node {i} is not positive"),
                ))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::norm2;

    fn line_prior(variant: BoundaryVariant, n: usize) -> (SlabMesh, EllipticPrior) {
        let slab = SlabMesh::build(n, 0, 1, 1.0, 0.01, 2).unwrap();
        let mesh = slab.extract_bottom().unwrap();
        let mean = NodalField::constant(&mesh, 1.0);
        let prior = EllipticPrior::assemble(&mesh, 7.0, Tensor::isotropic(1, 0.01), 0.0, mean, variant).unwrap();
        (mesh, prior)
    }

    #[test]
    fn sigma_formula_two_dimensional() {
        // nu = 1, Ga(1) = 1
        let expect = 1.0 / (4.0 * std::f64::consts::PI * 0.01 * 49.0);
        assert!((marginal_std(2, 0.01, 7.0) - expect).abs() < 1e-15);
        assert!((marginal_std(2, 0.01, 7.0) - 0.162403).abs() < 1e-6);
        // d = 1: nu = 3/2, Ga(3/2) = sqrt(pi)/2
        let e1 = std::f64::consts::PI.sqrt() / 2.0 / ((4.0 * std::f64::consts::PI).sqrt() * 0.01f64.powf(1.5) * 49.0);
        assert!((marginal_std(1, 0.01, 7.0) - e1).abs() < 1e-12 * e1);
    }

    #[test]
    fn rejects_invalid_parameters() {
        let slab = SlabMesh::build(4, 4, 1, 1.0, 0.01, 3).unwrap();
        let mesh = slab.extract_bottom().unwrap();
        let mean = NodalField::constant(&mesh, 0.0);
        let bad = Tensor::from_row_major(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(
            EllipticPrior::assemble(&mesh, 1.0, bad, 0.0, mean.clone(), BoundaryVariant::Neumann),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            EllipticPrior::assemble(&mesh, -1.0, Tensor::isotropic(2, 1.0), 0.0, mean.clone(), BoundaryVariant::Neumann),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            EllipticPrior::assemble(&mesh, 1.0, Tensor::isotropic(2, 1.0), -0.5, mean, BoundaryVariant::Robin),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn weighted_variance_is_flat() {
        let (_, prior) = line_prior(BoundaryVariant::Weighted, 40);
        let var = prior.pointwise_variance().unwrap();
        let s2 = prior.sigma() * prior.sigma();
        assert!(var.iter().all(|v| (v - s2).abs() <= 1e-10 * s2));
    }

    #[test]
    fn l_and_inverse_are_a_pair() {
        let (_, prior) = line_prior(BoundaryVariant::Weighted, 30);
        let z: Vec<f64> = (0..31).map(|i| (i as f64 * 0.3).sin() + 0.1).collect();
        let back = prior.apply_l_inv(&prior.apply_l(&z).unwrap()).unwrap();
        let diff: Vec<f64> = back.iter().zip(&z).map(|(a, b)| a - b).collect();
        assert!(norm2(&diff) <= 1e-10 * norm2(&z));
        let back = prior.apply_l_adjoint_inv(&prior.apply_l_adjoint(&z).unwrap()).unwrap();
        let diff: Vec<f64> = back.iter().zip(&z).map(|(a, b)| a - b).collect();
        assert!(norm2(&diff) <= 1e-10 * norm2(&z));
    }

    #[test]
    fn cost_vanishes_at_mean() {
        let (_, prior) = line_prior(BoundaryVariant::Weighted, 20);
        let (c, g) = prior.cost_and_grad(prior.mean().values()).unwrap();
        assert_eq!(c, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dirichlet_pins_boundary() {
        let (_, prior) = line_prior(BoundaryVariant::Dirichlet, 20);
        let s = prior.sample(5).unwrap();
        assert_eq!(s[0], 1.0);
        assert_eq!(s[20], 1.0);
        let var = prior.pointwise_variance().unwrap();
        assert_eq!(var[0], 0.0);
        assert!(var[10] > 0.0);
        assert!(prior.cost_and_grad(&s).is_err());
    }

    #[test]
    fn identical_seeds_identical_samples() {
        let (_, prior) = line_prior(BoundaryVariant::Weighted, 20);
        assert_eq!(prior.sample(11).unwrap(), prior.sample(11).unwrap());
        assert_ne!(prior.sample(11).unwrap(), prior.sample(12).unwrap());
    }
}
