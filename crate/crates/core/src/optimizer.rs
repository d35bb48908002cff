//! Inexact Gauss-Newton with prior-preconditioned CG, Eisenstat-Walker
//! forcing and Armijo backtracking. All inner products are problem-defined
//! (mass-weighted for the Robin inversion).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ErrorModel, ForwardModel, PoissonState};
use crate::prior::EllipticPrior;
use crate::util::{axpy, fmt_g17};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnConfig {
    pub rel_grad_tol: f64,
    pub max_gn_iters: usize,
    pub ew_max_forcing: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub max_backtracks: usize,
    /// Defaults to the parameter dimension.
    pub max_cg_iters: Option<usize>,
}

impl Default for GnConfig {
    fn default() -> Self {
        GnConfig {
            rel_grad_tol: 1e-7,
            max_gn_iters: 100,
            ew_max_forcing: 0.5,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            max_backtracks: 20,
            max_cg_iters: None,
        }
    }
}

impl GnConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.rel_grad_tol) {
            return Err(Error::invalid("rel_grad_tol must lie in (0, 1)"));
        }
        if !unit(self.armijo_c) {
            return Err(Error::invalid("armijo_c must lie in (0, 1)"));
        }
        if !unit(self.armijo_shrink) {
            return Err(Error::invalid("armijo_shrink must lie in (0, 1)"));
        }
        if !(self.ew_max_forcing > 0.0 && self.ew_max_forcing.is_finite()) {
            return Err(Error::invalid("ew_max_forcing must be positive"));
        }
        if self.max_gn_iters == 0 || self.max_backtracks == 0 || self.max_cg_iters == Some(0) {
            return Err(Error::invalid("iteration limits must be positive"));
        }
        Ok(())
    }
}

/// One Gauss-Newton iteration; row 0 is the initial guess.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterationRow {
    pub gn_iter: usize,
    pub cost: f64,
    pub misfit_cost: f64,
    pub prior_cost: f64,
    pub grad_norm: f64,
    pub cg_iters: usize,
    pub backtracks: usize,
    pub cumulative_poisson_solves: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub rows: Vec<IterationRow>,
    pub converged: bool,
    /// Set when `max_gn_iters` ran out before the gradient tolerance was met.
    pub hit_max_iters: bool,
    /// Line searches rescued by the steepest-descent fallback.
    pub fallback_steps: usize,
}

impl ConvergenceRecord {
    pub const CSV_HEADER: &'static str =
        "gn_iter,cost,misfit_cost,prior_cost,grad_norm,cg_iters,backtracks,cumulative_poisson_solves";

    /// Number of Gauss-Newton steps taken.
    pub fn gn_iters(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn total_cg(&self) -> usize {
        self.rows.iter().map(|r| r.cg_iters).sum()
    }

    pub fn total_backtracks(&self) -> usize {
        self.rows.iter().map(|r| r.backtracks).sum()
    }

    pub fn total_solves(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.cumulative_poisson_solves)
    }

    /// `sum over rows of 2 + 2 cg + backtracks`: the solve count implied by the cost model.
    pub fn predicted_solves(&self) -> u64 {
        self.rows
            .iter()
            .map(|r| (2 + 2 * r.cg_iters + r.backtracks) as u64)
            .sum()
    }

    pub fn final_grad_ratio(&self) -> f64 {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) if a.grad_norm > 0.0 => b.grad_norm / a.grad_norm,
            _ => 0.0,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.gn_iter,
                fmt_g17(r.cost),
                fmt_g17(r.misfit_cost),
                fmt_g17(r.prior_cost),
                fmt_g17(r.grad_norm),
                r.cg_iters,
                r.backtracks,
                r.cumulative_poisson_solves
            )?;
        }
        Ok(())
    }
}

/// Objective split into data-misfit and prior parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub misfit: f64,
    pub prior: f64,
}

impl Objective {
    pub fn total(&self) -> f64 {
        self.misfit + self.prior
    }
}

/// What the Gauss-Newton driver needs from a problem.
pub trait MapProblem {
    type State;

    fn dim(&self) -> usize;
    /// Objective at `x`, plus whatever state gradient and Hessian actions reuse.
    fn evaluate(&self, x: &[f64]) -> Result<(Self::State, Objective)>;
    /// Gradient in the problem's inner product.
    fn gradient(&self, state: &Self::State) -> Result<Vec<f64>>;
    /// Gauss-Newton Hessian action in the problem's inner product.
    fn hessian_action(&self, state: &Self::State, v: &[f64]) -> Result<Vec<f64>>;
    fn precondition(&self, r: &[f64]) -> Result<Vec<f64>>;
    fn inner(&self, a: &[f64], b: &[f64]) -> f64;
    /// Poisson solves performed so far.
    fn solve_count(&self) -> u64;
}

/// Preconditioned CG on `H s = -g` stopped at `|r| <= forcing |r_0|`.
///
/// Returns the step and the number of Hessian actions used. Nonpositive
/// curvature ends the iteration with the current iterate, or with the
/// preconditioned steepest-descent direction if it appears immediately.
pub fn cg_inner(
    mut hess: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    grad: &[f64],
    mut precond: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    inner: impl Fn(&[f64], &[f64]) -> f64,
    forcing: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = grad.len();
    let mut x = vec![0.0; n];
    let mut r: Vec<f64> = grad.iter().map(|g| -g).collect();
    let r0 = inner(&r, &r).sqrt();
    if r0 == 0.0 {
        return Ok((x, 0));
    }
    let tol = forcing * r0;
    let mut z = precond(&r)?;
    let mut d = z.clone();
    let mut rz = inner(&r, &z);
    let mut iters = 0;
    while iters < max_iters {
        let hd = hess(&d)?;
        iters += 1;
        let curv = inner(&d, &hd);
        if !(curv > 0.0) {
            if iters == 1 {
                return Ok((d, iters));
            }
            break;
        }
        let alpha = rz / curv;
        axpy(alpha, &d, &mut x);
        axpy(-alpha, &hd, &mut r);
        if inner(&r, &r).sqrt() <= tol {
            break;
        }
        z = precond(&r)?;
        let rz_new = inner(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (di, zi) in d.iter_mut().zip(&z) {
            *di = zi + beta * *di;
        }
    }
    Ok((x, iters))
}

/// Minimize the problem objective from `x0` by inexact Gauss-Newton.
///
/// Running out of iterations is reported in the record, not as an error.
pub fn solve_map<P: MapProblem>(problem: &P, x0: &[f64], cfg: &GnConfig) -> Result<(Vec<f64>, ConvergenceRecord)> {
    cfg.validate()?;
    if x0.len() != problem.dim() {
        return Err(Error::invalid("initial guess has the wrong dimension"));
    }
    let base = problem.solve_count();
    let solves = || problem.solve_count() - base;
    let max_cg = cfg.max_cg_iters.unwrap_or(problem.dim());

    let mut x = x0.to_vec();
    let (mut state, mut obj) = problem.evaluate(&x)?;
    let mut g = problem.gradient(&state)?;
    let mut gnorm = problem.inner(&g, &g).sqrt();
    let g0 = gnorm;
    let mut record = ConvergenceRecord::default();
    record.rows.push(IterationRow {
        gn_iter: 0,
        cost: obj.total(),
        misfit_cost: obj.misfit,
        prior_cost: obj.prior,
        grad_norm: gnorm,
        cg_iters: 0,
        backtracks: 0,
        cumulative_poisson_solves: solves(),
    });

    for k in 1..=cfg.max_gn_iters {
        if gnorm <= cfg.rel_grad_tol * g0 {
            break;
        }
        let forcing = cfg.ew_max_forcing.min((gnorm / g0).sqrt());
        let (mut dir, cg_iters) = cg_inner(
            |v| problem.hessian_action(&state, v),
            &g,
            |r| problem.precondition(r),
            |a, b| problem.inner(a, b),
            forcing,
            max_cg,
        )?;
        let mut slope = problem.inner(&g, &dir);
        if !(slope < 0.0) {
            dir = problem.precondition(&g)?.iter().map(|v| -v).collect();
            slope = problem.inner(&g, &dir);
        }

        let mut backtracks = 0;
        let mut fell_back = false;
        let accepted = loop {
            match line_search(problem, &x, &dir, slope, obj.total(), cfg, &mut backtracks)? {
                Some(found) => break Some(found),
                None if !fell_back => {
                    fell_back = true;
                    dir = problem.precondition(&g)?.iter().map(|v| -v).collect();
                    slope = problem.inner(&g, &dir);
                }
                None => break None,
            }
        };
        let Some((x_new, st_new, obj_new)) = accepted else {
            return Err(Error::LineSearchFailure {
                iteration: k,
                backtracks,
                partial: Box::new((x, record)),
            });
        };
        if fell_back {
            record.fallback_steps += 1;
        }
        x = x_new;
        state = st_new;
        obj = obj_new;
        g = problem.gradient(&state)?;
        gnorm = problem.inner(&g, &g).sqrt();
        record.rows.push(IterationRow {
            gn_iter: k,
            cost: obj.total(),
            misfit_cost: obj.misfit,
            prior_cost: obj.prior,
            grad_norm: gnorm,
            cg_iters,
            backtracks,
            cumulative_poisson_solves: solves(),
        });
    }
    record.converged = gnorm <= cfg.rel_grad_tol * g0;
    record.hit_max_iters = !record.converged;
    Ok((x, record))
}

/// Armijo backtracking along `dir`; rejected trials (including failed
/// evaluations) are added to `backtracks`.
#[allow(clippy::type_complexity)]
fn line_search<P: MapProblem>(
    problem: &P,
    x: &[f64],
    dir: &[f64],
    slope: f64,
    cost: f64,
    cfg: &GnConfig,
    backtracks: &mut usize,
) -> Result<Option<(Vec<f64>, P::State, Objective)>> {
    let mut t = 1.0;
    for _ in 0..=cfg.max_backtracks {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        match problem.evaluate(&trial) {
            Ok((st, ob)) if ob.total() <= cost + cfg.armijo_c * t * slope => return Ok(Some((trial, st, ob))),
            Ok(_) | Err(Error::NumericalFailure { .. }) => {}
            Err(e) => return Err(e),
        }
        *backtracks += 1;
        t *= cfg.armijo_shrink;
    }
    Ok(None)
}

/// MAP problem for the Robin coefficient: misfit through a forward model and
/// error model, plus an elliptic prior; mass-weighted inner product.
pub struct RobinMapProblem<'a> {
    pub model: &'a ForwardModel,
    pub prior: &'a EllipticPrior,
    pub err: &'a ErrorModel,
    pub data: &'a [f64],
}

impl<'a> RobinMapProblem<'a> {
    pub fn new(model: &'a ForwardModel, prior: &'a EllipticPrior, err: &'a ErrorModel, data: &'a [f64]) -> Result<Self> {
        if prior.n() != model.n_param() {
            return Err(Error::invalid("prior and forward model live on different parameter meshes"));
        }
        if data.len() != model.q() || err.q() != model.q() {
            return Err(Error::invalid("data or error model does not match the observation count"));
        }
        Ok(RobinMapProblem { model, prior, err, data })
    }
}

/// Forward state plus the prior gradient at the same point.
pub struct RobinState {
    pub poisson: PoissonState,
    prior_grad: Vec<f64>,
}

impl MapProblem for RobinMapProblem<'_> {
    type State = RobinState;

    fn dim(&self) -> usize {
        self.prior.n()
    }

    fn evaluate(&self, x: &[f64]) -> Result<(RobinState, Objective)> {
        let poisson = self.model.linearize(x)?;
        let misfit = self.model.misfit_cost(&poisson, self.data, self.err)?;
        let (prior, prior_grad) = self.prior.cost_and_grad(x)?;
        Ok((RobinState { poisson, prior_grad }, Objective { misfit, prior }))
    }

    fn gradient(&self, state: &RobinState) -> Result<Vec<f64>> {
        let (_, dual) = self.model.misfit_gradient(&state.poisson, self.data, self.err)?;
        let mut g = self.prior.mass_solve(&dual)?;
        axpy(1.0, &state.prior_grad, &mut g);
        Ok(g)
    }

    fn hessian_action(&self, state: &RobinState, v: &[f64]) -> Result<Vec<f64>> {
        let dual = self.model.gn_hessian_action(&state.poisson, v, self.err)?;
        let mut h = self.prior.mass_solve(&dual)?;
        axpy(1.0, &self.prior.apply_precision(v)?, &mut h);
        Ok(h)
    }

    fn precondition(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.prior.apply_covariance(r)
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.prior.inner(a, b)
    }

    fn solve_count(&self) -> u64 {
        self.model.counts().total()
    }
}
