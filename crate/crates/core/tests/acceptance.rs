//! Acceptance suite: one PASS/FAIL line per criterion, in order. Runs as a
//! plain binary so the expensive error-statistics runs are shared between
//! criteria 7-10; exits nonzero if any criterion fails.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use robin_bae::bae::dominance_check;
use robin_bae::experiment::{
    coverage_report, error_stats, invert, model_for, noise_covariance, synthesize_data, Case, ExperimentConfig,
    ModelKind, Setup,
};
use robin_bae::fem::{NodalField, Tensor};
use robin_bae::forward::{ErrorModel, SlabProblem};
use robin_bae::mesh::SlabMesh;
use robin_bae::optimizer::{MapProblem, RobinMapProblem};
use robin_bae::posterior::ppmisfit_eigs;
use robin_bae::prior::{BoundaryVariant, EllipticPrior};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn desk_setup(case: Case, r: usize) -> Setup {
    let mut cfg = ExperimentConfig::for_case(case);
    cfg.bae_samples = r;
    Setup::new(&cfg).expect("desk setup")
}

fn gradient_check(setup: &Setup) -> Outcome {
    let truth = synthesize_data(setup).unwrap();
    let (model, err) = model_for(setup, &truth, ModelKind::Cem, None).unwrap();
    let problem = RobinMapProblem::new(&model, &setup.beta_prior, &err, &truth.observed).unwrap();
    let x0 = setup.beta_prior.sample(11).unwrap();
    let (state, _) = problem.evaluate(&x0).unwrap();
    let g = problem.gradient(&state).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let d = gaussian(&mut rng, x0.len());
        let exact = problem.inner(&g, &d);
        let cost = |t: f64| {
            let x: Vec<f64> = x0.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            problem.evaluate(&x).unwrap().1.total()
        };
        let best = (2..=8)
            .map(|k| {
                let h = 10f64.powi(-k);
                let fd = (cost(h) - cost(-h)) / (2.0 * h);
                (fd - exact).abs() / exact.abs()
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    outcome(worst <= 1e-4, format!("worst min-over-steps relative error {worst:.2e} (tol 1e-4)"))
}

fn hessian_check(setup: &Setup) -> Outcome {
    let truth = synthesize_data(setup).unwrap();
    let (model, err) = model_for(setup, &truth, ModelKind::Cem, None).unwrap();
    let problem = RobinMapProblem::new(&model, &setup.beta_prior, &err, &truth.observed).unwrap();
    let (state, _) = problem.evaluate(&setup.beta_prior.sample(21).unwrap()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(22);
    let n = problem.dim();
    let (mut worst_sym, mut min_curv) = (0.0f64, f64::INFINITY);
    for _ in 0..10 {
        let v = gaussian(&mut rng, n);
        let w = gaussian(&mut rng, n);
        let hv = problem.hessian_action(&state, &v).unwrap();
        let hw = problem.hessian_action(&state, &w).unwrap();
        let asym = (problem.inner(&hv, &w) - problem.inner(&v, &hw)).abs();
        let scale = problem.inner(&hv, &hv).sqrt() * problem.inner(&w, &w).sqrt();
        worst_sym = worst_sym.max(asym / scale);
        min_curv = min_curv.min(problem.inner(&hv, &v));
    }
    outcome(
        worst_sym <= 1e-8 && min_curv >= 0.0,
        format!("worst relative asymmetry {worst_sym:.2e} (tol 1e-8), min <Hv,v> {min_curv:.3e}"),
    )
}

fn rank_check(setup: &Setup) -> Outcome {
    let truth = synthesize_data(setup).unwrap();
    let (model, err) = model_for(setup, &truth, ModelKind::Cem, None).unwrap();
    let beta = setup.beta_prior.mean().values().to_vec();
    let state = model.linearize(&beta).unwrap();
    let q = model.q();
    let lr = ppmisfit_eigs(&model, &state, &setup.beta_prior, &err, &beta, q + 10, 31, 0.1).unwrap();
    let s = lr.spectrum();
    let ratio = s[q].abs() / s[0];
    outcome(
        q == 33 && ratio <= 1e-10,
        format!("q = {q}, lambda_1 = {:.3e}, |lambda_{}| / lambda_1 = {ratio:.2e} (tol 1e-10)", s[0], q + 1),
    )
}

/// Small 2D slab whose parameter mesh has 41 nodes, with everything dense.
struct DenseInstance {
    model: robin_bae::forward::ForwardModel,
    prior: EllipticPrior,
    err: ErrorModel,
    beta: Vec<f64>,
}

fn dense_instance() -> DenseInstance {
    let mesh = SlabMesh::build(40, 0, 2, 1.0, 0.05, 2).unwrap();
    let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![0.1 + 0.16 * i as f64, 0.05]).collect();
    let problem = Arc::new(SlabProblem::with_unit_flux(mesh, &pts).unwrap());
    let prior = EllipticPrior::assemble(
        problem.bottom(),
        7.0,
        Tensor::isotropic(1, 0.01),
        0.0,
        NodalField::constant(problem.bottom(), 1.0),
        BoundaryVariant::Weighted,
    )
    .unwrap();
    let a = NodalField::constant(problem.volume(), 0.0);
    let model = problem.model(&a).unwrap();
    let beta = prior.sample(41).unwrap();
    let err = ErrorModel::noise_only(6, 2e-3).unwrap();
    DenseInstance { model, prior, err, beta }
}

fn columns(n: usize, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        m.set_column(j, &DVector::from_vec(f(&e)));
    }
    m
}

fn smw_check(d: &DenseInstance) -> (Outcome, Outcome) {
    let n = d.prior.n();
    let state = d.model.linearize(&d.beta).unwrap();
    let lr = ppmisfit_eigs(&d.model, &state, &d.prior, &d.err, &d.beta, n, 51, 0.0).unwrap();

    let mass = columns(n, |e| d.prior.mass_apply(e));
    let mass_inv = mass.clone().try_inverse().unwrap();
    let h_dual = columns(n, |e| d.model.gn_hessian_action(&state, e, &d.err).unwrap());
    let precision = columns(n, |e| d.prior.apply_precision(e).unwrap());
    let dense_post = (&mass_inv * h_dual + precision).try_inverse().unwrap();

    let mut rng = ChaCha20Rng::seed_from_u64(52);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let z = gaussian(&mut rng, n);
        let exact = &dense_post * DVector::from_vec(z.clone());
        let low = DVector::from_vec(lr.cov_apply(&z).unwrap());
        worst = worst.max((low - &exact).norm() / exact.norm());
    }
    let c4 = outcome(
        worst <= 1e-6,
        format!("n = {n}, worst relative error over 20 vectors {worst:.2e} (tol 1e-6)"),
    );

    // S S* with the adjoint taken in the mass inner product: S* = M^{-1} S^T M.
    let s = columns(n, |e| lr.sqrt_apply(e).unwrap());
    let sst = &s * &mass_inv * s.transpose() * &mass;
    let post = columns(n, |e| lr.cov_apply(e).unwrap());
    let rel = (&sst - &post).norm() / post.norm();
    let c5 = outcome(rel <= 1e-8, format!("||S S* - Gamma_post||_F / ||Gamma_post||_F = {rel:.2e} (tol 1e-8)"));
    (c4, c5)
}

fn flatness_check(setup: &Setup) -> Outcome {
    let weighted = &setup.beta_prior;
    let n = weighted.n();
    // Diagonal of the coefficient covariance Gamma M^{-1}, node by node.
    let var: Vec<f64> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            weighted.apply_covariance(&weighted.mass_solve(&e).unwrap()).unwrap()[i]
        })
        .collect();
    let (lo, hi) = var.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let spread = (hi - lo) / hi;
    let b = &setup.cfg.beta_prior;
    let mesh = setup.coarse.bottom();
    let neumann = EllipticPrior::assemble(
        mesh,
        b.alpha,
        Tensor::isotropic(2, b.gamma),
        b.kappa,
        NodalField::constant(mesh, b.mean),
        BoundaryVariant::Neumann,
    )
    .unwrap();
    let nv = neumann.pointwise_variance().unwrap();
    let (nlo, nhi) = nv.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let variation = nhi / nlo - 1.0;
    outcome(
        spread <= 1e-8 && variation >= 0.5,
        format!(
            "{n} nodes, weighted relative spread {spread:.2e} (tol 1e-8), variance {:.6}; NEUMANN max/min - 1 = {:.2} (>= 0.5)",
            var[0], variation
        ),
    )
}

/// Results of the full desk-scale comparison for one case.
struct CaseRun {
    case: Case,
    trace_ratio: f64,
    global: bool,
    components: (usize, usize),
    coverage: [f64; 3],
    converged: [bool; 3],
    gn_iters: [usize; 3],
    grad_ratio: [f64; 3],
    solves: [u64; 3],
    predicted: [u64; 3],
    widening: f64,
    seconds: f64,
}

fn run_case(case: Case) -> CaseRun {
    let t0 = Instant::now();
    let setup = desk_setup(case, 200);
    let truth = synthesize_data(&setup).unwrap();
    let stats = error_stats(&setup).unwrap();
    let q = stats.q();
    let noise = noise_covariance(q, truth.delta_e);
    let dom = dominance_check(&stats, &vec![0.0; q], &noise);
    let trace_ratio = stats.trace() / noise.trace();

    let mut coverage = [0.0; 3];
    let mut converged = [false; 3];
    let mut gn_iters = [0; 3];
    let mut grad_ratio = [0.0; 3];
    let mut solves = [0; 3];
    let mut predicted = [0; 3];
    let mut bae_map = Vec::new();
    for (k, kind) in ModelKind::ALL.into_iter().enumerate() {
        let st = (kind == ModelKind::Bae).then_some(&stats);
        let (model, err) = model_for(&setup, &truth, kind, st).unwrap();
        let inv = invert(&setup, &model, &err, &truth.observed, kind).unwrap();
        let lr = robin_bae::experiment::posterior(&setup, &model, &err, &inv.beta_map, kind).unwrap();
        coverage[k] = coverage_report(&inv.beta_map, &lr.pointwise_variance().unwrap(), &truth.beta_coarse);
        converged[k] = inv.converged();
        gn_iters[k] = inv.record.gn_iters();
        grad_ratio[k] = inv.record.final_grad_ratio();
        solves[k] = inv.record.total_solves();
        predicted[k] = inv.record.predicted_solves();
        if kind == ModelKind::Bae {
            bae_map = inv.beta_map;
        }
    }

    // Posterior widening at the BAE MAP point: same forward model and state, two error models.
    let (model, bae_err) = model_for(&setup, &truth, ModelKind::Bae, Some(&stats)).unwrap();
    let (_, cem_err) = model_for(&setup, &truth, ModelKind::Cem, None).unwrap();
    let state = model.linearize(&bae_map).unwrap();
    let probes = q + 10;
    let prior = &setup.beta_prior;
    let wide = ppmisfit_eigs(&model, &state, prior, &bae_err, &bae_map, probes, 61, 0.0).unwrap();
    let narrow = ppmisfit_eigs(&model, &state, prior, &cem_err, &bae_map, probes, 62, 0.0).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(63);
    let mut wider = 0;
    for _ in 0..1000 {
        let z = gaussian(&mut rng, prior.n());
        let mz = prior.mass_apply(&z);
        let a = dot(&mz, &wide.cov_apply(&z).unwrap());
        let b = dot(&mz, &narrow.cov_apply(&z).unwrap());
        if a >= b * (1.0 - 1e-12) {
            wider += 1;
        }
    }

    CaseRun {
        case,
        trace_ratio,
        global: dom.global,
        components: (dom.components.iter().filter(|c| c.dominated).count(), dom.components.len()),
        coverage,
        converged,
        gn_iters,
        grad_ratio,
        solves,
        predicted,
        widening: wider as f64 / 1000.0,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn dominance_outcome(runs: &[CaseRun]) -> Outcome {
    let pass = runs.iter().all(|r| r.trace_ratio >= 10.0 && r.global);
    let detail = runs
        .iter()
        .map(|r| {
            format!(
                "{}: tr ratio {:.1}, global {}, {}/{} components",
                r.case.as_str(),
                r.trace_ratio,
                r.global,
                r.components.0,
                r.components.1
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, format!("r = 200; {detail}"))
}

fn coverage_outcome(runs: &[CaseRun]) -> Outcome {
    let pass = runs
        .iter()
        .all(|r| r.coverage[2] >= 0.85 && r.coverage[2] > r.coverage[1] && r.coverage[0] >= 0.85);
    let detail = runs
        .iter()
        .map(|r| {
            format!(
                "{}: ref {:.3}, cem {:.3}, bae {:.3} ({:.0} s)",
                r.case.as_str(),
                r.coverage[0],
                r.coverage[1],
                r.coverage[2],
                r.seconds
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

fn accounting_outcome(runs: &[CaseRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        for k in 0..3 {
            if r.converged[k] {
                pass &= r.gn_iters[k] <= 50 && r.grad_ratio[k] <= 1e-7;
            }
            pass &= r.solves[k] == r.predicted[k];
        }
        let parity = r.solves[2] as f64 / r.solves[1] as f64;
        pass &= parity <= 2.0;
        parts.push(format!(
            "{}: GN {:?} converged {:?} solves {:?} (predicted {:?}) BAE/CEM {:.2}",
            r.case.as_str(),
            r.gn_iters,
            r.converged,
            r.solves,
            r.predicted,
            parity
        ));
    }
    outcome(pass, parts.join("; "))
}

fn widening_outcome(runs: &[CaseRun]) -> Outcome {
    let pass = runs.iter().all(|r| r.widening >= 0.99);
    let detail = runs
        .iter()
        .map(|r| format!("{}: {:.1}% of 1000 directions", r.case.as_str(), 100.0 * r.widening))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

fn run_all_in(dir: &Path, config: &Path) -> i32 {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_robin-bae"))
        .args(["--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--seed", "7", "run-all"])
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    status.code().unwrap_or(-1)
}

fn determinism_check() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.json");
    std::fs::write(
        &config,
        r#"{"inversion_mesh": [10, 10, 1], "synthesis_mesh": [20, 20, 2], "bae_samples": 50}"#,
    )
    .unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let codes = (run_all_in(&a, &config), run_all_in(&b, &config));
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv") || n == "manifest.json")
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok())
        .collect();
    outcome(
        codes.0 == codes.1 && names.contains(&"manifest.json".to_string()) && differing.is_empty(),
        format!(
            "exit codes {codes:?}, {} files compared, {} differ",
            names.len(),
            differing.len()
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |k: usize, t: Instant, o: Outcome| {
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {k:>2}: {} ({:.1} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    };

    let t = Instant::now();
    let iso = desk_setup(Case::Isotropic, 200);
    println!("desk setup built in {:.1} s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    report(1, t, gradient_check(&iso));
    let t = Instant::now();
    report(2, t, hessian_check(&iso));
    let t = Instant::now();
    report(3, t, rank_check(&iso));
    let t = Instant::now();
    let dense = dense_instance();
    let (c4, c5) = smw_check(&dense);
    report(4, t, c4);
    report(5, t, c5);
    let t = Instant::now();
    report(6, t, flatness_check(&iso));
    drop(iso);

    let t = Instant::now();
    let runs: Vec<CaseRun> = [Case::Isotropic, Case::Anisotropic].into_iter().map(run_case).collect();
    report(7, t, dominance_outcome(&runs));
    report(8, t, coverage_outcome(&runs));
    report(9, t, accounting_outcome(&runs));
    report(10, t, widening_outcome(&runs));

    let t = Instant::now();
    report(11, t, determinism_check());

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 11 acceptance criteria passed");
}
