//! Low-rank Laplace approximation of the posterior.
//!
//! The prior-preconditioned misfit Hessian `T = L* H_mis L` is self-adjoint
//! in the mass inner product and has rank at most `q`. With its leading
//! eigenpairs `(lambda_i, v_i)`, `v_i^T M v_j = delta_ij`:
//!
//! ```text
//!   Gamma_post = L (I - V D V^T M) L*,      D = lambda / (lambda + 1)
//!   S          = L (V P V^T M + I),         P = 1/sqrt(lambda + 1) - 1
//! ```
//!
//! so that `S S* = Gamma_post`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{ErrorModel, ForwardModel, PoissonState};
use crate::prior::EllipticPrior;
use crate::util::{axpy, fmt_g17};

/// Default truncation: keep eigenvalues above this.
pub const DEFAULT_TRUNCATION: f64 = 0.1;

/// `T z = L* H_mis L z`, computed as `K^{-1} W h(L z)` with `h` the dual misfit-Hessian action.
pub fn pp_misfit_apply(
    model: &ForwardModel,
    state: &PoissonState,
    prior: &EllipticPrior,
    err: &ErrorModel,
    z: &[f64],
) -> Result<Vec<f64>> {
    let h = model.gn_hessian_action(state, &prior.apply_l(z)?, err)?;
    let wh: Vec<f64> = h.iter().zip(prior.weight()).map(|(a, w)| a * w).collect();
    prior.solve_operator(&wh)
}

#[derive(Clone, Debug)]
pub struct LowRankPosterior<'a> {
    prior: &'a EllipticPrior,
    map: Vec<f64>,
    /// Every computed eigenvalue, descending.
    spectrum: Vec<f64>,
    /// All computed eigenvectors, columns M-orthonormal.
    basis: DMatrix<f64>,
    rank: usize,
    truncation: f64,
    under_probed: bool,
}

/// Randomized double-pass eigensolver for `T` at the linearization `state`.
///
/// Uses `n_probe` Gaussian probes (clipped to the parameter dimension); keeps
/// eigenpairs with `lambda > truncation`.
#[allow(clippy::too_many_arguments)]
pub fn ppmisfit_eigs<'a>(
    model: &ForwardModel,
    state: &PoissonState,
    prior: &'a EllipticPrior,
    err: &ErrorModel,
    map: &[f64],
    n_probe: usize,
    seed: u64,
    truncation: f64,
) -> Result<LowRankPosterior<'a>> {
    let n = prior.n();
    if map.len() != n || model.n_param() != n {
        return Err(Error::invalid("MAP point, model and prior disagree on the parameter dimension"));
    }
    if n_probe == 0 {
        return Err(Error::invalid("need at least one probe"));
    }
    if !(truncation >= 0.0) {
        return Err(Error::invalid("truncation threshold must be nonnegative"));
    }
    let k = n_probe.min(n);
    let under_probed = k < n && n_probe < model.q() + 10;
    if under_probed {
        log::warn!("{n_probe} probes for an operator of rank up to {}", model.q());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let omega: Vec<Vec<f64>> = (0..k).map(|_| prior.standard_normal(&mut rng)).collect();
    let apply_t = |z: &Vec<f64>| pp_misfit_apply(model, state, prior, err, z);

    let y: Vec<Vec<f64>> = omega.par_iter().map(apply_t).collect::<Result<_>>()?;
    let q = m_orthonormalize(prior, y, &mut rng);
    let tq: Vec<Vec<f64>> = q.par_iter().map(apply_t).collect::<Result<_>>()?;

    let mtq: Vec<Vec<f64>> = tq.iter().map(|c| prior.mass_apply(c)).collect();
    let kk = q.len();
    let mut b = DMatrix::zeros(kk, kk);
    for i in 0..kk {
        for j in 0..kk {
            b[(i, j)] = crate::util::dot(&q[i], &mtq[j]);
        }
    }
    let b = (&b + b.transpose()) * 0.5;
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..kk).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let qmat = DMatrix::from_fn(n, kk, |r, c| q[c][r]);
    let mut basis = DMatrix::zeros(n, kk);
    let mut spectrum = Vec::with_capacity(kk);
    for (col, &i) in order.iter().enumerate() {
        let mut v: DVector<f64> = &qmat * eig.eigenvectors.column(i);
        let vmax = v.amax();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * vmax) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        basis.set_column(col, &v);
        spectrum.push(eig.eigenvalues[i]);
    }
    let rank = spectrum.iter().take_while(|&&l| l > truncation).count();
    Ok(LowRankPosterior {
        prior,
        map: map.to_vec(),
        spectrum,
        basis,
        rank,
        truncation,
        under_probed,
    })
}

/// Modified Gram-Schmidt in the mass inner product, two passes. Columns that
/// vanish numerically are replaced by fresh random directions so the basis
/// keeps its size.
fn m_orthonormalize(prior: &EllipticPrior, cols: Vec<Vec<f64>>, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    let n = prior.n();
    for mut c in cols {
        for _attempt in 0..5 {
            let before = prior.inner(&c, &c).sqrt();
            for _pass in 0..2 {
                for q in &out {
                    let p = prior.inner(q, &c);
                    axpy(-p, q, &mut c);
                }
            }
            let after = prior.inner(&c, &c).sqrt();
            if after > 1e-10 * before && after > 0.0 {
                c.iter_mut().for_each(|x| *x /= after);
                break;
            }
            c = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
        }
        if out.len() < n {
            out.push(c);
        }
    }
    out
}

impl<'a> LowRankPosterior<'a> {
    /// Posterior that keeps no eigenpairs (equal to the prior around `map`).
    pub fn prior_only(prior: &'a EllipticPrior, map: &[f64]) -> Self {
        LowRankPosterior {
            prior,
            map: map.to_vec(),
            spectrum: Vec::new(),
            basis: DMatrix::zeros(prior.n(), 0),
            rank: 0,
            truncation: DEFAULT_TRUNCATION,
            under_probed: false,
        }
    }

    pub fn prior(&self) -> &EllipticPrior {
        self.prior
    }

    pub fn map(&self) -> &[f64] {
        &self.map
    }

    /// Full computed spectrum, descending (before truncation).
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Retained eigenvalues.
    pub fn eigvals(&self) -> &[f64] {
        &self.spectrum[..self.rank]
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn under_probed(&self) -> bool {
        self.under_probed
    }

    /// Computed eigenvector `i` (0-based, any index in the spectrum).
    pub fn eigvec(&self, i: usize) -> Vec<f64> {
        self.basis.column(i).iter().copied().collect()
    }

    /// Re-truncate with a different threshold.
    pub fn with_truncation(mut self, threshold: f64) -> Self {
        self.truncation = threshold;
        self.rank = self.spectrum.iter().take_while(|&&l| l > threshold).count();
        self
    }

    /// `v -> V diag(c) V^T M v` over retained pairs.
    fn low_rank(&self, coef: impl Fn(f64) -> f64, v: &[f64]) -> Vec<f64> {
        let mv = self.prior.mass_apply(v);
        let mut out = vec![0.0; v.len()];
        for i in 0..self.rank {
            let col = self.basis.column(i);
            let p: f64 = col.iter().zip(&mv).map(|(a, b)| a * b).sum();
            let s = coef(self.spectrum[i]) * p;
            for (o, c) in out.iter_mut().zip(col.iter()) {
                *o += s * c;
            }
        }
        out
    }

    /// `L (I - V D V^T M) L* z`.
    pub fn cov_apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        let y = self.prior.apply_l_adjoint(z)?;
        let corr = self.low_rank(|l| l / (l + 1.0), &y);
        let inner: Vec<f64> = y.iter().zip(&corr).map(|(a, b)| a - b).collect();
        self.prior.apply_l(&inner)
    }

    /// `S w = L (V P V^T M w + w)`.
    pub fn sqrt_apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        let corr = self.low_rank(|l| 1.0 / (l + 1.0).sqrt() - 1.0, w);
        let inner: Vec<f64> = w.iter().zip(&corr).map(|(a, b)| a + b).collect();
        self.prior.apply_l(&inner)
    }

    /// Sample `map + S w` with `w` mass-white noise.
    pub fn sample_with(&self, rng: &mut impl rand::Rng) -> Result<Vec<f64>> {
        let xi = self.prior.standard_normal(rng);
        let w = self.prior.white_noise(&xi);
        let s = self.sqrt_apply(&w)?;
        Ok(self.map.iter().zip(&s).map(|(m, x)| m + x).collect())
    }

    pub fn sample(&self, seed: u64) -> Result<Vec<f64>> {
        self.sample_with(&mut ChaCha20Rng::seed_from_u64(seed))
    }

    /// Nodewise posterior variance: prior variance minus `sum_i D_i (L v_i)^2`.
    pub fn pointwise_variance(&self) -> Result<Vec<f64>> {
        let mut var = self.prior.pointwise_variance()?;
        for i in 0..self.rank {
            let lv = self.prior.apply_l(&self.eigvec(i))?;
            let d = self.spectrum[i] / (self.spectrum[i] + 1.0);
            for (v, x) in var.iter_mut().zip(&lv) {
                *v -= d * x * x;
            }
        }
        Ok(var)
    }

    /// Spectrum export, `index,eigenvalue`, 1-based.
    pub fn write_spectrum_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,eigenvalue")?;
        for (i, l) in self.spectrum.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, fmt_g17(*l))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{NodalField, Tensor};
    use crate::forward::SlabProblem;
    use crate::mesh::SlabMesh;
    use crate::prior::BoundaryVariant;
    use std::sync::Arc;

    fn setup() -> (Arc<SlabProblem>, EllipticPrior) {
        let mesh = SlabMesh::build(30, 0, 2, 1.0, 0.05, 2).unwrap();
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![0.15 + 0.17 * i as f64, 0.05]).collect();
        let p = Arc::new(SlabProblem::with_unit_flux(mesh, &pts).unwrap());
        let prior = EllipticPrior::assemble(
            p.bottom(),
            7.0,
            Tensor::isotropic(1, 0.01),
            0.0,
            NodalField::constant(p.bottom(), 1.0),
            BoundaryVariant::Weighted,
        )
        .unwrap();
        (p, prior)
    }

    #[test]
    fn eigenvectors_are_mass_orthonormal_and_rank_bounded() {
        let (p, prior) = setup();
        let model = p.model(&NodalField::constant(p.volume(), 0.0)).unwrap();
        let beta = prior.mean().values().to_vec();
        let st = model.linearize(&beta).unwrap();
        let err = ErrorModel::noise_only(5, 1e-3).unwrap();
        let lr = ppmisfit_eigs(&model, &st, &prior, &err, &beta, 15, 1, 0.0).unwrap();
        let s = lr.spectrum();
        assert_eq!(s.len(), 15);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        assert!(s[5].abs() <= 1e-10 * s[0]);
        for i in 0..15 {
            for j in 0..15 {
                let ip = prior.inner(&lr.eigvec(i), &lr.eigvec(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-8, "({i},{j}) = {ip}");
            }
        }
    }

    #[test]
    fn empty_truncation_is_prior() {
        let (_, prior) = setup();
        let lr = LowRankPosterior::prior_only(&prior, prior.mean().values());
        let z: Vec<f64> = (0..prior.n()).map(|i| (i as f64 * 0.2).cos()).collect();
        assert_eq!(lr.cov_apply(&z).unwrap(), prior.apply_covariance(&z).unwrap());
        assert_eq!(lr.pointwise_variance().unwrap(), prior.pointwise_variance().unwrap());
    }

    #[test]
    fn posterior_variance_below_prior() {
        let (p, prior) = setup();
        let model = p.model(&NodalField::constant(p.volume(), 0.0)).unwrap();
        let beta = prior.mean().values().to_vec();
        let st = model.linearize(&beta).unwrap();
        let err = ErrorModel::noise_only(5, 1e-3).unwrap();
        let lr = ppmisfit_eigs(&model, &st, &prior, &err, &beta, 15, 1, DEFAULT_TRUNCATION).unwrap();
        assert!(lr.rank() > 0);
        let post = lr.pointwise_variance().unwrap();
        let pri = prior.pointwise_variance().unwrap();
        assert!(post.iter().zip(&pri).all(|(a, b)| a <= b));
        let mut buf = Vec::new();
        lr.write_spectrum_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("index,eigenvalue\n1,"));
    }
}
