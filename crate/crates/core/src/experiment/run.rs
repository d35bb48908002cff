use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::bae::{self, Conductivity, DominanceReport, ErrorStats, Prolongation};
use crate::error::{Error, Result};
use crate::fem::{evaluate_at, NodalField, Tensor};
use crate::forward::{ErrorModel, ForwardModel, SlabProblem, SolveCounter};
use crate::mesh::SlabMesh;
use crate::optimizer::{solve_map, ConvergenceRecord, RobinMapProblem};
use crate::posterior::{ppmisfit_eigs, LowRankPosterior};
use crate::prior::{BoundaryVariant, EllipticPrior};

use super::config::ExperimentConfig;

/// Which conductivity and error model an inversion uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// True conductivity, noise-only errors.
    Ref,
    /// Mean conductivity, noise-only errors.
    Cem,
    /// Mean conductivity, enhanced error model.
    Bae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Ref, ModelKind::Cem, ModelKind::Bae];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ref => "ref",
            ModelKind::Cem => "cem",
            ModelKind::Bae => "bae",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ref" => Ok(ModelKind::Ref),
            "cem" => Ok(ModelKind::Cem),
            "bae" => Ok(ModelKind::Bae),
            other => Err(Error::Config(format!("unknown model '{other}' (expected ref, cem or bae)"))),
        }
    }
}

/// Meshes, discretized problems and priors shared by every stage.
pub struct Setup {
    pub cfg: ExperimentConfig,
    /// Inversion mesh problem.
    pub coarse: Arc<SlabProblem>,
    /// Synthesis mesh problem.
    pub fine: Arc<SlabProblem>,
    /// Robin-coefficient prior on the inversion parameter mesh.
    pub beta_prior: EllipticPrior,
    /// Same prior on the synthesis parameter mesh (truth draws).
    pub beta_prior_fine: EllipticPrior,
    /// Conductivity prior on the synthesis volume.
    pub a_prior_fine: EllipticPrior,
    /// Prior-mean conductivity on the inversion volume.
    pub a_star: NodalField,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.resolved();
        let [ix, iy, iz] = cfg.inversion();
        let [sx, sy, sz] = cfg.synthesis();
        let pts = cfg.points_3d();
        let flux = cfg.flux;
        let coarse_mesh = SlabMesh::build(ix, iy, iz, cfg.length, cfg.height, 3)?;
        let fine_mesh = SlabMesh::build(sx, sy, sz, cfg.length, cfg.height, 3)?;
        let coarse = Arc::new(SlabProblem::new(coarse_mesh, &pts, |_| flux)?);
        let fine = Arc::new(SlabProblem::new(fine_mesh, &pts, |_| flux)?);

        let b = &cfg.beta_prior;
        let beta_prior_on = |mesh: &SlabMesh| {
            EllipticPrior::assemble(
                mesh,
                b.alpha,
                Tensor::isotropic(2, b.gamma),
                b.kappa,
                NodalField::constant(mesh, b.mean),
                BoundaryVariant::Weighted,
            )
        };
        let beta_prior = beta_prior_on(coarse.bottom())?;
        let beta_prior_fine = beta_prior_on(fine.bottom())?;
        let a_prior_fine = EllipticPrior::assemble(
            fine.volume(),
            cfg.a_prior.alpha,
            cfg.a_tensor()?,
            0.0,
            NodalField::constant(fine.volume(), cfg.a_prior.mean),
            BoundaryVariant::Neumann,
        )?;
        let a_star = NodalField::constant(coarse.volume(), cfg.a_prior.mean);
        Ok(Setup {
            cfg,
            coarse,
            fine,
            beta_prior,
            beta_prior_fine,
            a_prior_fine,
            a_star,
        })
    }
}

/// Synthetic truth and data.
#[derive(Clone, Debug)]
pub struct Truth {
    pub beta_fine: Vec<f64>,
    pub a_fine: Vec<f64>,
    /// `beta_true` at the inversion parameter nodes.
    pub beta_coarse: Vec<f64>,
    /// `a_true` at the inversion volume nodes.
    pub a_coarse: Vec<f64>,
    pub noiseless: Vec<f64>,
    pub observed: Vec<f64>,
    /// Noise standard deviation.
    pub delta_e: f64,
}

/// Draw the truth fields, solve on the synthesis mesh and add noise.
pub fn synthesize_data(setup: &Setup) -> Result<Truth> {
    let cfg = &setup.cfg;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed("truth"));
    let a_fine = setup.a_prior_fine.sample_with(&mut rng)?;
    let beta_fine = setup.beta_prior_fine.sample_with(&mut rng)?;
    let model = setup.fine.model(&NodalField::new(setup.fine.volume(), a_fine.clone())?)?;
    let noiseless = model.evaluate(&beta_fine)?;

    let lo = noiseless.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = noiseless.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let delta_e = (hi - lo) * cfg.noise_percent / 100.0;
    if cfg.noise_percent > 0.0 && !(delta_e > 0.0) {
        return Err(Error::numerical("noise level", "noiseless observations have zero range"));
    }
    let mut noise_rng = ChaCha20Rng::seed_from_u64(cfg.seed("noise"));
    let observed = noiseless
        .iter()
        .map(|d| {
            let xi: f64 = StandardNormal.sample(&mut noise_rng);
            if delta_e > 0.0 {
                d + delta_e * xi
            } else {
                *d
            }
        })
        .collect();

    let beta_coarse = Prolongation::new(setup.fine.bottom(), setup.coarse.bottom())?.apply(&beta_fine);
    let a_coarse = Prolongation::new(setup.fine.volume(), setup.coarse.volume())?.apply(&a_fine);
    Ok(Truth {
        beta_fine,
        a_fine,
        beta_coarse,
        a_coarse,
        noiseless,
        observed,
        delta_e,
    })
}

/// Approximation-error statistics with the configured sample count.
pub fn error_stats(setup: &Setup) -> Result<ErrorStats> {
    let approx = setup.coarse.model(&setup.a_star)?;
    bae::compute_error_stats(
        &setup.fine,
        &approx,
        Conductivity::Prior(&setup.a_prior_fine),
        &setup.beta_prior,
        setup.cfg.bae_samples,
        setup.cfg.seed("bae"),
    )
}

pub fn dominance(stats: &ErrorStats, delta_e: f64) -> DominanceReport {
    let q = stats.q();
    bae::dominance_check(stats, &vec![0.0; q], &noise_covariance(q, delta_e))
}

pub fn noise_covariance(q: usize, delta_e: f64) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::identity(q, q) * (delta_e * delta_e)
}

/// Forward model and error model for one inversion variant.
pub fn model_for(
    setup: &Setup,
    truth: &Truth,
    kind: ModelKind,
    stats: Option<&ErrorStats>,
) -> Result<(ForwardModel, ErrorModel)> {
    let q = setup.coarse.q();
    match kind {
        ModelKind::Ref => {
            let a = NodalField::new(setup.coarse.volume(), truth.a_coarse.clone())?;
            Ok((setup.coarse.model(&a)?, ErrorModel::noise_only(q, truth.delta_e)?))
        }
        ModelKind::Cem => Ok((
            setup.coarse.model(&setup.a_star)?,
            ErrorModel::noise_only(q, truth.delta_e)?,
        )),
        ModelKind::Bae => {
            let stats = stats.ok_or_else(|| Error::invalid("the BAE inversion needs error statistics"))?;
            let err = bae::enhanced_model(stats, &noise_covariance(q, truth.delta_e), &vec![0.0; q])?;
            Ok((setup.coarse.model(&setup.a_star)?, err))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Inversion {
    pub kind: ModelKind,
    pub beta_map: Vec<f64>,
    pub record: ConvergenceRecord,
    /// False after a line-search failure; `beta_map` is then the last accepted iterate.
    pub line_search_ok: bool,
    pub counts: SolveCounter,
}

impl Inversion {
    pub fn converged(&self) -> bool {
        self.line_search_ok && self.record.converged
    }
}

/// MAP estimate from the prior mean.
pub fn invert(setup: &Setup, model: &ForwardModel, err: &ErrorModel, data: &[f64], kind: ModelKind) -> Result<Inversion> {
    let problem = RobinMapProblem::new(model, &setup.beta_prior, err, data)?;
    let x0 = setup.beta_prior.mean().values().to_vec();
    let (beta_map, record, line_search_ok) = match solve_map(&problem, &x0, &setup.cfg.optimizer) {
        Ok((x, rec)) => (x, rec, true),
        Err(Error::LineSearchFailure { partial, iteration, .. }) if kind == ModelKind::Cem => {
            log::warn!("{} inversion: line search failed at iteration {iteration}", kind.as_str());
            let (x, rec) = *partial;
            (x, rec, false)
        }
        Err(e) => return Err(e),
    };
    Ok(Inversion {
        kind,
        beta_map,
        record,
        line_search_ok,
        counts: model.counts(),
    })
}

/// Low-rank posterior at the MAP point.
pub fn posterior<'a>(
    setup: &'a Setup,
    model: &ForwardModel,
    err: &ErrorModel,
    beta_map: &[f64],
    kind: ModelKind,
) -> Result<LowRankPosterior<'a>> {
    let state = model.linearize(beta_map)?;
    ppmisfit_eigs(
        model,
        &state,
        &setup.beta_prior,
        err,
        beta_map,
        setup.cfg.n_probe(),
        setup.cfg.seed(&format!("probe-{}", kind.as_str())),
        setup.cfg.truncation,
    )
}

/// Fraction of nodes with `|truth - map| <= 2 sqrt(var)`.
pub fn coverage_report(beta_map: &[f64], variance: &[f64], truth: &[f64]) -> f64 {
    let hits = beta_map
        .iter()
        .zip(variance)
        .zip(truth)
        .filter(|((m, v), t)| (*t - *m).abs() <= 2.0 * v.max(0.0).sqrt())
        .count();
    hits as f64 / beta_map.len().max(1) as f64
}

/// A straight chord across the parameter surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Line {
    pub name: &'static str,
    pub start: [f64; 2],
    pub end: [f64; 2],
}

/// The two diagonal chords used for the cross-section tables.
pub fn default_lines(length: f64) -> [Line; 2] {
    [
        Line {
            name: "p",
            start: [0.05 * length, 0.05 * length],
            end: [0.95 * length, 0.95 * length],
        },
        Line {
            name: "q",
            start: [0.05 * length, 0.95 * length],
            end: [0.95 * length, 0.05 * length],
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossSectionRow {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub map: f64,
    pub truth: f64,
    pub lower: f64,
    pub upper: f64,
}

/// P1 values along `line` at `n` equally spaced points.
pub fn sample_line(mesh: &SlabMesh, field: &NodalField, line: &Line, n: usize) -> Result<Vec<([f64; 3], f64)>> {
    (0..n)
        .map(|i| {
            let s = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let x = line.start[0] + s * (line.end[0] - line.start[0]);
            let y = line.start[1] + s * (line.end[1] - line.start[1]);
            Ok(([s, x, y], evaluate_at(mesh, field, &[x, y])?))
        })
        .collect()
}

/// Cross-section of the MAP with truth and the `+-2 sigma` band.
pub fn extract_cross_section(
    setup: &Setup,
    truth: &Truth,
    beta_map: &[f64],
    variance: &[f64],
    line: &Line,
) -> Result<Vec<CrossSectionRow>> {
    let n = setup.cfg.cross_section_samples;
    let cm = setup.coarse.bottom();
    let map = sample_line(cm, &NodalField::new(cm, beta_map.to_vec())?, line, n)?;
    let sd: Vec<f64> = variance.iter().map(|v| v.max(0.0).sqrt()).collect();
    let sd = sample_line(cm, &NodalField::new(cm, sd)?, line, n)?;
    let fm = setup.fine.bottom();
    let tr = sample_line(fm, &NodalField::new(fm, truth.beta_fine.clone())?, line, n)?;
    Ok(map
        .iter()
        .zip(&sd)
        .zip(&tr)
        .map(|(((p, m), (_, s)), (_, t))| CrossSectionRow {
            s: p[0],
            x: p[1],
            y: p[2],
            map: *m,
            truth: *t,
            lower: m - 2.0 * s,
            upper: m + 2.0 * s,
        })
        .collect())
}
