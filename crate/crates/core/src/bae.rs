//! Approximation-error statistics: Monte Carlo over the joint prior of the
//! conductivity and the Robin coefficient, comparing an accurate model (fine
//! mesh, random conductivity) with the approximate one (coarse mesh, fixed
//! conductivity).

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::NodalField;
use crate::forward::{ErrorModel, ForwardModel, SlabProblem};
use crate::mesh::SlabMesh;
use crate::prior::EllipticPrior;

/// Conductivity used by the accurate model in each sample.
#[derive(Clone, Copy, Debug)]
pub enum Conductivity<'a> {
    /// Independent draw per sample.
    Prior(&'a EllipticPrior),
    /// Same field for every sample (a point-mass prior).
    Fixed(&'a NodalField),
}

/// Linear P1 interpolation from one mesh onto the nodes of another.
#[derive(Clone, Debug)]
pub struct Prolongation {
    rows: Option<Vec<Vec<(usize, f64)>>>,
}

impl Prolongation {
    pub fn new(src: &SlabMesh, dst: &SlabMesh) -> Result<Self> {
        if src.id() == dst.id() {
            return Ok(Prolongation { rows: None });
        }
        if src.dim() != dst.dim() {
            return Err(Error::invalid("cannot prolongate between meshes of different dimension"));
        }
        let rows = (0..dst.n_nodes())
            .map(|i| {
                let (c, lam) = src.locate(dst.node(i))?;
                Ok(src
                    .cell(c)
                    .iter()
                    .zip(lam.iter())
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(&v, &w)| (v, w))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prolongation { rows: Some(rows) })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.rows {
            None => x.to_vec(),
            Some(rows) => rows
                .iter()
                .map(|row| row.iter().map(|&(v, w)| w * x[v]).sum())
                .collect(),
        }
    }
}

/// Per-sample seeds derived from the master seed.
pub fn sample_seeds(master_seed: u64, r: usize) -> Vec<u64> {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    (0..r).map(|_| rng.random()).collect()
}

/// Draw `r` error samples `f_accurate(a, beta) - f_approx(beta)`.
///
/// `beta` is drawn from `prior_beta` (on the approximate model's parameter
/// mesh) and prolongated to the accurate one; the approximate model keeps its
/// own fixed conductivity. Results are independent of the thread schedule.
pub fn compute_error_samples(
    accurate: &Arc<SlabProblem>,
    approximate: &ForwardModel,
    conductivity: Conductivity<'_>,
    prior_beta: &EllipticPrior,
    r: usize,
    master_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if accurate.q() != approximate.q() {
        return Err(Error::invalid("accurate and approximate models observe different point sets"));
    }
    if prior_beta.n() != approximate.n_param() {
        return Err(Error::invalid("beta prior does not live on the approximate parameter mesh"));
    }
    match conductivity {
        Conductivity::Prior(p) if p.n() != accurate.volume().n_nodes() => {
            return Err(Error::invalid("conductivity prior does not live on the accurate volume mesh"));
        }
        Conductivity::Fixed(a) => a.check_on(accurate.volume(), "fixed conductivity")?,
        _ => {}
    }
    let prolong = Prolongation::new(approximate.problem().bottom(), accurate.bottom())?;
    let fixed_model = match conductivity {
        Conductivity::Fixed(a) => Some(accurate.model(a)?),
        Conductivity::Prior(_) => None,
    };
    sample_seeds(master_seed, r)
        .into_par_iter()
        .enumerate()
        .map(|(index, seed)| {
            let run = || -> Result<Vec<f64>> {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let a = match conductivity {
                    Conductivity::Prior(p) => Some(NodalField::new(accurate.volume(), p.sample_with(&mut rng)?)?),
                    Conductivity::Fixed(_) => None,
                };
                let beta = prior_beta.sample_with(&mut rng)?;
                let fine = match (&a, &fixed_model) {
                    (Some(a), _) => accurate.model(a)?.evaluate(&prolong.apply(&beta))?,
                    (None, Some(m)) => m.evaluate(&prolong.apply(&beta))?,
                    (None, None) => unreachable!("conductivity source is either drawn or fixed"),
                };
                let coarse = approximate.evaluate(&beta)?;
                Ok(fine.iter().zip(&coarse).map(|(f, c)| f - c).collect())
            };
            run().map_err(|e| Error::Sample {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Sample mean and unbiased covariance of the approximation error.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorStats {
    pub eps_mean: Vec<f64>,
    pub eps_cov: DMatrix<f64>,
    pub r: usize,
    pub master_seed: u64,
    pub per_sample_seeds: Vec<u64>,
    pub accurate_mesh_id: u64,
    pub approximate_mesh_id: u64,
}

#[derive(Serialize, Deserialize)]
struct ErrorStatsJson {
    r: usize,
    q: usize,
    eps_mean: Vec<f64>,
    eps_cov: Vec<f64>,
    master_seed: u64,
    accurate_mesh_id: String,
    approximate_mesh_id: String,
}

impl ErrorStats {
    pub fn q(&self) -> usize {
        self.eps_mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.eps_cov.trace()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut cov = Vec::with_capacity(self.q() * self.q());
        for i in 0..self.q() {
            for j in 0..self.q() {
                cov.push(self.eps_cov[(i, j)]);
            }
        }
        Ok(serde_json::to_string_pretty(&ErrorStatsJson {
            r: self.r,
            q: self.q(),
            eps_mean: self.eps_mean.clone(),
            eps_cov: cov,
            master_seed: self.master_seed,
            accurate_mesh_id: format!("{:016x}", self.accurate_mesh_id),
            approximate_mesh_id: format!("{:016x}", self.approximate_mesh_id),
        })?)
    }

    /// Inverse of [`ErrorStats::to_json`]; per-sample seeds are regenerated from the master seed.
    pub fn from_json(text: &str) -> Result<Self> {
        let j: ErrorStatsJson = serde_json::from_str(text)?;
        if j.eps_mean.len() != j.q || j.eps_cov.len() != j.q * j.q || j.r < 2 {
            return Err(Error::invalid("inconsistent error statistics"));
        }
        let id = |s: &str| u64::from_str_radix(s, 16).map_err(|e| Error::invalid(format!("bad mesh id '{s}': {e}")));
        Ok(ErrorStats {
            eps_cov: DMatrix::from_row_slice(j.q, j.q, &j.eps_cov),
            eps_mean: j.eps_mean,
            r: j.r,
            master_seed: j.master_seed,
            per_sample_seeds: sample_seeds(j.master_seed, j.r),
            accurate_mesh_id: id(&j.accurate_mesh_id)?,
            approximate_mesh_id: id(&j.approximate_mesh_id)?,
        })
    }
}

/// Mean `(1/r) sum eps` and covariance `(1/(r-1)) sum (eps - mean)(eps - mean)^T`,
/// accumulated in sample order.
pub fn sample_stats(samples: &[Vec<f64>]) -> Result<ErrorStats> {
    let r = samples.len();
    if r < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {r}")));
    }
    let q = samples[0].len();
    if samples.iter().any(|s| s.len() != q) {
        return Err(Error::invalid("samples have inconsistent lengths"));
    }
    let mut mean = vec![0.0; q];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= r as f64);
    let mut cov = DMatrix::zeros(q, q);
    for s in samples {
        let d: Vec<f64> = s.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..q {
            for j in 0..=i {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    for i in 0..q {
        for j in 0..=i {
            let v = cov[(i, j)] / (r - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(ErrorStats {
        eps_mean: mean,
        eps_cov: cov,
        r,
        master_seed: 0,
        per_sample_seeds: Vec::new(),
        accurate_mesh_id: 0,
        approximate_mesh_id: 0,
    })
}

/// Draw samples and reduce them to statistics, recording seeds and mesh fingerprints.
pub fn compute_error_stats(
    accurate: &Arc<SlabProblem>,
    approximate: &ForwardModel,
    conductivity: Conductivity<'_>,
    prior_beta: &EllipticPrior,
    r: usize,
    master_seed: u64,
) -> Result<ErrorStats> {
    if r < 2 {
        return Err(Error::invalid(format!("need at least 2 error samples, got {r}")));
    }
    let samples = compute_error_samples(accurate, approximate, conductivity, prior_beta, r, master_seed)?;
    let mut stats = sample_stats(&samples)?;
    stats.master_seed = master_seed;
    stats.per_sample_seeds = sample_seeds(master_seed, r);
    stats.accurate_mesh_id = accurate.volume().id();
    stats.approximate_mesh_id = approximate.problem().volume().id();
    Ok(stats)
}

/// Total-error model with `nu_* = e_* + eps_*` and `Gamma_nu = Gamma_e + Gamma_eps`.
pub fn enhanced_model(stats: &ErrorStats, noise_cov: &DMatrix<f64>, noise_mean: &[f64]) -> Result<ErrorModel> {
    let q = stats.q();
    if noise_mean.len() != q || noise_cov.nrows() != q || noise_cov.ncols() != q {
        return Err(Error::invalid("noise statistics do not match the error statistics"));
    }
    let mean = noise_mean.iter().zip(&stats.eps_mean).map(|(e, x)| e + x).collect();
    ErrorModel::new(mean, noise_cov + &stats.eps_cov)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentDominance {
    /// `e_*(k)^2 + Gamma_e(k,k)`
    pub noise: f64,
    /// `eps_*(k)^2 + Gamma_eps(k,k)`
    pub approximation: f64,
    pub dominated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    /// `|e_*|^2 + tr(Gamma_e)`
    pub noise: f64,
    /// `|eps_*|^2 + tr(Gamma_eps)`
    pub approximation: f64,
    pub global: bool,
    pub components: Vec<ComponentDominance>,
}

impl DominanceReport {
    pub fn all_components(&self) -> bool {
        self.components.iter().all(|c| c.dominated)
    }
}

/// Does the approximation error dominate the measurement noise?
pub fn dominance_check(stats: &ErrorStats, noise_mean: &[f64], noise_cov: &DMatrix<f64>) -> DominanceReport {
    let components: Vec<ComponentDominance> = (0..stats.q())
        .map(|k| {
            let noise = noise_mean[k] * noise_mean[k] + noise_cov[(k, k)];
            let approximation = stats.eps_mean[k] * stats.eps_mean[k] + stats.eps_cov[(k, k)];
            ComponentDominance {
                noise,
                approximation,
                dominated: noise < approximation,
            }
        })
        .collect();
    let noise: f64 = components.iter().map(|c| c.noise).sum();
    let approximation: f64 = components.iter().map(|c| c.approximation).sum();
    DominanceReport {
        noise,
        approximation,
        global: noise < approximation,
        components,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Tensor;
    use crate::prior::BoundaryVariant;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_sample_hand_arithmetic() {
        let s = sample_stats(&[vec![1.0, 0.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(s.eps_mean, vec![2.0, 0.0]);
        assert_eq!(s.eps_cov, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        assert!(sample_stats(&[vec![1.0]]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut s = sample_stats(&[vec![1.0 / 3.0, 0.25], vec![3.0, -0.5e-300], vec![0.1 + 0.2, std::f64::consts::PI]]).unwrap();
        s.master_seed = 42;
        s.per_sample_seeds = sample_seeds(42, 3);
        s.accurate_mesh_id = 0xdead_beef;
        s.approximate_mesh_id = 7;
        assert_eq!(ErrorStats::from_json(&s.to_json().unwrap()).unwrap(), s);
    }

    #[test]
    fn identical_samples_zero_covariance() {
        let s = sample_stats(&vec![vec![0.5, -1.0, 2.0]; 7]).unwrap();
        assert!(s.eps_cov.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dominance_cases() {
        let mut s = sample_stats(&[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        let ncov = DMatrix::identity(3, 3) * 1e-4;
        let rep = dominance_check(&s, &[0.0; 3], &ncov);
        assert!(!rep.global && rep.components.iter().all(|c| !c.dominated));
        s.eps_cov = &ncov * 100.0;
        let rep = dominance_check(&s, &[0.0; 3], &ncov);
        assert!(rep.global && rep.all_components());
    }

    #[test]
    fn zero_error_reduces_to_noise_model() {
        let s = sample_stats(&[vec![0.0; 2], vec![0.0; 2]]).unwrap();
        let ncov = DMatrix::identity(2, 2) * 0.04;
        let m = enhanced_model(&s, &ncov, &[0.0, 0.0]).unwrap();
        assert_eq!(m.mean_shift(), &[0.0, 0.0]);
        assert_eq!(m.covariance(), &ncov);
    }

    #[test]
    fn estimator_converges_at_monte_carlo_rate() {
        let l = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 0.8, 0.0, -0.3, 0.2, 0.4]);
        let truth = &l * l.transpose();
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let mut errs = Vec::new();
        for r in [100, 1000, 10000] {
            let samples: Vec<Vec<f64>> = (0..r)
                .map(|_| {
                    let xi = nalgebra::DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
                    (&l * xi).iter().map(|v| v + 1.0).collect()
                })
                .collect();
            let s = sample_stats(&samples).unwrap();
            let e = (&s.eps_cov - &truth).norm() / truth.norm();
            assert!(e < 4.0 / (r as f64).sqrt(), "r={r}: relative error {e}");
            errs.push(e);
        }
        assert!(errs[2] < errs[0]);
    }

    #[test]
    fn point_mass_conductivity_gives_zero_error() {
        let mesh = SlabMesh::build(4, 4, 2, 1.0, 0.1, 3).unwrap();
        let pts = vec![vec![0.25, 0.5, 0.1], vec![0.6, 0.6, 0.1]];
        let problem = Arc::new(SlabProblem::with_unit_flux(mesh, &pts).unwrap());
        let a_star = NodalField::constant(problem.volume(), 0.0);
        let model = problem.model(&a_star).unwrap();
        let bottom = problem.bottom();
        let prior = EllipticPrior::assemble(
            bottom,
            7.0,
            Tensor::isotropic(2, 0.01),
            0.0,
            NodalField::constant(bottom, 1.0),
            BoundaryVariant::Neumann,
        )
        .unwrap();
        let eps = compute_error_samples(&problem, &model, Conductivity::Fixed(&a_star), &prior, 5, 3).unwrap();
        assert!(eps.iter().flatten().all(|&e| e == 0.0));
    }

    proptest! {
        #[test]
        fn covariance_is_psd(data in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 2..30)) {
            let s = sample_stats(&data).unwrap();
            let tr = s.trace();
            let min = s.eps_cov.clone().symmetric_eigen().eigenvalues.min();
            prop_assert!(min >= -1e-12 * tr.max(1e-300));
            prop_assert_eq!(s.eps_cov.clone(), s.eps_cov.transpose());
        }
    }
}
