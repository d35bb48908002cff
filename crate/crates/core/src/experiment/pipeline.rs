//! Stages of the experiment, each writing its artifacts plus a JSON summary
//! tagged with the config hash. Later stages reuse earlier artifacts when the
//! hash matches and recompute them otherwise, so every CLI subcommand can run
//! on its own.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bae::{DominanceReport, ErrorStats};
use crate::error::{Error, Result};
use crate::mesh::SlabMesh;

use super::config::ExperimentConfig;
use super::output::{table_csv, OutputDir};
use super::run::{
    coverage_report, default_lines, dominance, error_stats, extract_cross_section, invert, model_for, posterior,
    synthesize_data, Inversion, ModelKind, Setup, Truth,
};

pub struct Context {
    pub setup: Setup,
    pub out: OutputDir,
    pub hash: String,
}

impl Context {
    pub fn new(cfg: &ExperimentConfig, out: &Path) -> Result<Self> {
        let setup = Setup::new(cfg)?;
        let hash = setup.cfg.hash();
        let out = OutputDir::create(out)?;
        out.write_json("config.json", &setup.cfg)?;
        Ok(Context { setup, out, hash })
    }

    fn cfg(&self) -> &ExperimentConfig {
        &self.setup.cfg
    }

    /// Load a summary if it exists and belongs to this configuration.
    fn fresh<T: for<'de> Deserialize<'de> + Tagged>(&self, name: &str) -> Option<T> {
        if !self.out.exists(name) {
            return None;
        }
        self.out.read_json::<T>(name).ok().filter(|s| s.config_hash() == self.hash)
    }
}

trait Tagged {
    fn config_hash(&self) -> &str;
}

macro_rules! tagged {
    ($($t:ty),*) => {$(
        impl Tagged for $t {
            fn config_hash(&self) -> &str {
                &self.config_hash
            }
        }
    )*};
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub config_hash: String,
    pub q: usize,
    pub delta_e: f64,
    pub noise_percent: f64,
    pub data_min: f64,
    pub data_max: f64,
    pub truth_seed: u64,
    pub noise_seed: u64,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStatsSummary {
    pub config_hash: String,
    pub r: usize,
    pub sample_seed: u64,
    pub trace_eps: f64,
    pub trace_noise: f64,
    pub trace_ratio: f64,
    pub dominance: DominanceReport,
    /// Which models produce the error samples.
    pub accurate_model: String,
    pub approximate_model: String,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionSummary {
    pub config_hash: String,
    pub model: String,
    pub converged: bool,
    pub line_search_ok: bool,
    pub hit_max_iters: bool,
    pub gn_iters: usize,
    pub total_cg: usize,
    pub avg_cg: f64,
    pub total_backtracks: usize,
    pub fallback_steps: usize,
    pub poisson_solves: u64,
    pub predicted_solves: u64,
    pub final_grad_ratio: f64,
    pub cost: f64,
    pub misfit_cost: f64,
    pub prior_cost: f64,
    /// Conductivity seen by the inversion's forward model.
    pub conductivity: String,
    pub forward_mesh: String,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub config_hash: String,
    pub model: String,
    pub n_probe: usize,
    pub probe_seed: u64,
    pub computed_eigenvalues: usize,
    pub retained_eigenvalues: usize,
    pub truncation: f64,
    pub under_probed: bool,
    pub coverage: f64,
    /// Mean variance reduction at the parameter nodes nearest to the measurements, and elsewhere.
    pub reduction_near_observations: f64,
    pub reduction_elsewhere: f64,
    pub artifacts: Vec<String>,
}

tagged!(SynthesisSummary, ErrorStatsSummary, InversionSummary, PosteriorSummary);

fn mesh_label(mesh: &SlabMesh) -> String {
    let r: Vec<String> = mesh.resolution().iter().map(|n| n.to_string()).collect();
    r.join("x")
}

pub fn synthesize(ctx: &Context) -> Result<(Truth, SynthesisSummary)> {
    let s = &ctx.setup;
    let truth = synthesize_data(s)?;
    let out = &ctx.out;
    let mut artifacts = vec![
        out.write_field("truth_beta.csv", s.coarse.bottom(), &truth.beta_coarse)?,
        out.write_field("truth_beta_synthesis.csv", s.fine.bottom(), &truth.beta_fine)?,
        out.write_field("truth_a.csv", s.coarse.volume(), &truth.a_coarse)?,
        out.write_field("prior_variance.csv", s.coarse.bottom(), &s.beta_prior.pointwise_variance()?)?,
    ];
    let rows = ctx.cfg().points().into_iter().enumerate().map(|(k, p)| {
        vec![k as f64, p[0], p[1], ctx.cfg().height, truth.noiseless[k], truth.observed[k]]
    });
    artifacts.push(out.write(
        "data.csv",
        &table_csv(&["index", "x", "y", "z", "noiseless", "observed"], rows),
    )?);
    let summary = SynthesisSummary {
        config_hash: ctx.hash.clone(),
        q: truth.observed.len(),
        delta_e: truth.delta_e,
        noise_percent: ctx.cfg().noise_percent,
        data_min: truth.noiseless.iter().copied().fold(f64::INFINITY, f64::min),
        data_max: truth.noiseless.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        truth_seed: ctx.cfg().seed("truth"),
        noise_seed: ctx.cfg().seed("noise"),
        artifacts,
    };
    out.write_json("synthesis.json", &summary)?;
    Ok((truth, summary))
}

pub fn compute_error_stats(ctx: &Context, truth: &Truth) -> Result<(ErrorStats, ErrorStatsSummary)> {
    let s = &ctx.setup;
    let stats = error_stats(s)?;
    let dom = dominance(&stats, truth.delta_e);
    let trace_noise = stats.q() as f64 * truth.delta_e * truth.delta_e;
    let artifacts = vec![ctx.out.write("error_stats.json", &(stats.to_json()? + "\n"))?];
    let summary = ErrorStatsSummary {
        config_hash: ctx.hash.clone(),
        r: stats.r,
        sample_seed: stats.master_seed,
        trace_eps: stats.trace(),
        trace_noise,
        trace_ratio: stats.trace() / trace_noise,
        dominance: dom,
        accurate_model: format!("synthesis mesh {}, conductivity drawn from its prior", mesh_label(s.fine.volume())),
        approximate_model: format!("inversion mesh {}, prior-mean conductivity", mesh_label(s.coarse.volume())),
        artifacts,
    };
    ctx.out.write_json("error_stats_summary.json", &summary)?;
    Ok((stats, summary))
}

/// Error statistics from disk when current, otherwise recomputed.
pub fn error_stats_for(ctx: &Context, truth: &Truth) -> Result<ErrorStats> {
    if ctx.fresh::<ErrorStatsSummary>("error_stats_summary.json").is_some() {
        if let Ok(stats) = ErrorStats::from_json(&ctx.out.read("error_stats.json")?) {
            return Ok(stats);
        }
    }
    Ok(compute_error_stats(ctx, truth)?.0)
}

pub fn run_inversion(
    ctx: &Context,
    truth: &Truth,
    kind: ModelKind,
    stats: Option<&ErrorStats>,
) -> Result<(Inversion, InversionSummary)> {
    let s = &ctx.setup;
    let (model, err) = model_for(s, truth, kind, stats)?;
    let inv = invert(s, &model, &err, &truth.observed, kind)?;
    let m = kind.as_str();
    let mut conv = Vec::new();
    inv.record
        .write_csv(&mut conv)
        .map_err(|e| Error::io(ctx.out.path(&format!("convergence_{m}.csv")), e))?;
    let artifacts = vec![
        ctx.out.write_field(&format!("map_{m}.csv"), s.coarse.bottom(), &inv.beta_map)?,
        ctx.out.write(&format!("convergence_{m}.csv"), &String::from_utf8_lossy(&conv))?,
    ];
    let rec = &inv.record;
    let last = rec.rows.last().copied().expect("record has an initial row");
    let summary = InversionSummary {
        config_hash: ctx.hash.clone(),
        model: m.to_string(),
        converged: inv.converged(),
        line_search_ok: inv.line_search_ok,
        hit_max_iters: rec.hit_max_iters,
        gn_iters: rec.gn_iters(),
        total_cg: rec.total_cg(),
        avg_cg: rec.total_cg() as f64 / rec.gn_iters().max(1) as f64,
        total_backtracks: rec.total_backtracks(),
        fallback_steps: rec.fallback_steps,
        poisson_solves: rec.total_solves(),
        predicted_solves: rec.predicted_solves(),
        final_grad_ratio: rec.final_grad_ratio(),
        cost: last.cost,
        misfit_cost: last.misfit_cost,
        prior_cost: last.prior_cost,
        conductivity: match kind {
            ModelKind::Ref => "true field restricted to the inversion mesh".into(),
            _ => "prior mean".into(),
        },
        forward_mesh: mesh_label(s.coarse.volume()),
        artifacts,
    };
    ctx.out.write_json(&format!("inversion_{m}.json"), &summary)?;
    Ok((inv, summary))
}

/// MAP point from disk when current, otherwise a fresh inversion.
pub fn map_for(ctx: &Context, truth: &Truth, kind: ModelKind, stats: Option<&ErrorStats>) -> Result<Vec<f64>> {
    let m = kind.as_str();
    if ctx.fresh::<InversionSummary>(&format!("inversion_{m}.json")).is_some() {
        if let Ok(map) = ctx.out.read_field(&format!("map_{m}.csv"), ctx.setup.coarse.bottom()) {
            return Ok(map);
        }
    }
    Ok(run_inversion(ctx, truth, kind, stats)?.0.beta_map)
}

pub fn run_posterior(
    ctx: &Context,
    truth: &Truth,
    kind: ModelKind,
    stats: Option<&ErrorStats>,
    beta_map: &[f64],
) -> Result<PosteriorSummary> {
    let s = &ctx.setup;
    let m = kind.as_str();
    let (model, err) = model_for(s, truth, kind, stats)?;
    let lr = posterior(s, &model, &err, beta_map, kind)?;
    let var = lr.pointwise_variance()?;
    let bottom = s.coarse.bottom();
    let out = &ctx.out;

    let mut spectrum = Vec::new();
    lr.write_spectrum_csv(&mut spectrum)
        .map_err(|e| Error::io(out.path(&format!("spectrum_{m}.csv")), e))?;
    let mut artifacts = vec![
        out.write_field(&format!("variance_{m}.csv"), bottom, &var)?,
        out.write(&format!("spectrum_{m}.csv"), &String::from_utf8_lossy(&spectrum))?,
    ];
    for i in 0..s.cfg.exported_eigenvectors.min(lr.spectrum().len()) {
        artifacts.push(out.write_field(&format!("eigvec_{m}_{}.csv", i + 1), bottom, &lr.eigvec(i))?);
    }
    for line in default_lines(s.cfg.length) {
        let rows = extract_cross_section(s, truth, beta_map, &var, &line)?;
        let table = table_csv(
            &["s", "x", "y", "map", "truth", "lower", "upper"],
            rows.iter().map(|r| vec![r.s, r.x, r.y, r.map, r.truth, r.lower, r.upper]),
        );
        artifacts.push(out.write(&format!("section_{m}_{}.csv", line.name), &table)?);
    }

    let prior_var = s.beta_prior.pointwise_variance()?;
    let near = nearest_nodes(bottom, &s.cfg.points());
    let (mut sum_near, mut n_near, mut sum_far, mut n_far) = (0.0, 0usize, 0.0, 0usize);
    for (i, (p, v)) in prior_var.iter().zip(&var).enumerate() {
        if near[i] {
            sum_near += p - v;
            n_near += 1;
        } else {
            sum_far += p - v;
            n_far += 1;
        }
    }
    let summary = PosteriorSummary {
        config_hash: ctx.hash.clone(),
        model: m.to_string(),
        n_probe: s.cfg.n_probe(),
        probe_seed: s.cfg.seed(&format!("probe-{m}")),
        computed_eigenvalues: lr.spectrum().len(),
        retained_eigenvalues: lr.rank(),
        truncation: lr.truncation(),
        under_probed: lr.under_probed(),
        coverage: coverage_report(beta_map, &var, &truth.beta_coarse),
        reduction_near_observations: sum_near / n_near.max(1) as f64,
        reduction_elsewhere: sum_far / n_far.max(1) as f64,
        artifacts,
    };
    out.write_json(&format!("posterior_{m}.json"), &summary)?;
    Ok(summary)
}

/// Flags the parameter node closest to each measurement location.
fn nearest_nodes(mesh: &SlabMesh, points: &[[f64; 2]]) -> Vec<bool> {
    let mut flags = vec![false; mesh.n_nodes()];
    for p in points {
        let best = (0..mesh.n_nodes())
            .min_by(|&a, &b| {
                let d = |i: usize| {
                    let x = mesh.node(i);
                    (x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)
                };
                d(a).total_cmp(&d(b))
            })
            .expect("mesh has nodes");
        flags[best] = true;
    }
    flags
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshInfo {
    pub resolution: Vec<usize>,
    pub nodes: usize,
    pub cells: usize,
    pub parameter_nodes: usize,
}

impl MeshInfo {
    fn of(volume: &SlabMesh, bottom: &SlabMesh) -> Self {
        MeshInfo {
            resolution: volume.resolution().to_vec(),
            nodes: volume.n_nodes(),
            cells: volume.n_cells(),
            parameter_nodes: bottom.n_nodes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineInfo {
    pub name: String,
    pub start: [f64; 2],
    pub end: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub inversion: InversionSummary,
    pub posterior: PosteriorSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: String,
    pub case: String,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub inversion_mesh: MeshInfo,
    pub synthesis_mesh: MeshInfo,
    pub observation_points: Vec<[f64; 2]>,
    pub flux: f64,
    pub synthesis: SynthesisSummary,
    pub error_stats: ErrorStatsSummary,
    pub models: BTreeMap<String, ModelEntry>,
    pub coverage: BTreeMap<String, f64>,
    pub poisson_solves: BTreeMap<String, u64>,
    pub bae_over_cem_solves: f64,
    pub cross_section_lines: Vec<LineInfo>,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn all_converged(&self) -> bool {
        self.models.values().all(|m| m.inversion.converged)
    }
}

/// Assemble the manifest from the stage summaries on disk.
pub fn report(ctx: &Context) -> Result<Manifest> {
    let missing = |name: &str| {
        Error::Config(format!(
            "{name} is missing or belongs to another configuration; run the earlier stages first"
        ))
    };
    let synthesis: SynthesisSummary = ctx.fresh("synthesis.json").ok_or_else(|| missing("synthesis.json"))?;
    let error_stats: ErrorStatsSummary = ctx
        .fresh("error_stats_summary.json")
        .ok_or_else(|| missing("error_stats_summary.json"))?;
    let mut models = BTreeMap::new();
    for kind in ModelKind::ALL {
        let m = kind.as_str();
        let inv_name = format!("inversion_{m}.json");
        let post_name = format!("posterior_{m}.json");
        let inversion: InversionSummary = ctx.fresh(&inv_name).ok_or_else(|| missing(&inv_name))?;
        let posterior: PosteriorSummary = ctx.fresh(&post_name).ok_or_else(|| missing(&post_name))?;
        models.insert(m.to_string(), ModelEntry { inversion, posterior });
    }
    let s = &ctx.setup;
    let cfg = ctx.cfg();
    let mut seeds = BTreeMap::new();
    for stream in ["truth", "noise", "bae", "probe-ref", "probe-cem", "probe-bae"] {
        seeds.insert(stream.to_string(), cfg.seed(stream));
    }
    let mut artifacts: Vec<String> = vec!["config.json".into()];
    artifacts.extend(synthesis.artifacts.iter().cloned());
    artifacts.extend(error_stats.artifacts.iter().cloned());
    for e in models.values() {
        artifacts.extend(e.inversion.artifacts.iter().cloned());
        artifacts.extend(e.posterior.artifacts.iter().cloned());
    }
    artifacts.extend(
        ["synthesis.json", "error_stats_summary.json"]
            .iter()
            .map(|s| s.to_string()),
    );
    for m in models.keys() {
        artifacts.push(format!("inversion_{m}.json"));
        artifacts.push(format!("posterior_{m}.json"));
    }
    artifacts.sort();
    let coverage = models.iter().map(|(k, e)| (k.clone(), e.posterior.coverage)).collect();
    let poisson_solves: BTreeMap<String, u64> = models
        .iter()
        .map(|(k, e)| (k.clone(), e.inversion.poisson_solves))
        .collect();
    let bae_over_cem_solves = poisson_solves["bae"] as f64 / poisson_solves["cem"].max(1) as f64;
    let manifest = Manifest {
        config_hash: ctx.hash.clone(),
        config: "config.json".into(),
        case: cfg.case.as_str().into(),
        master_seed: cfg.master_seed,
        seeds,
        inversion_mesh: MeshInfo::of(s.coarse.volume(), s.coarse.bottom()),
        synthesis_mesh: MeshInfo::of(s.fine.volume(), s.fine.bottom()),
        observation_points: cfg.points(),
        flux: cfg.flux,
        synthesis,
        error_stats,
        models,
        coverage,
        poisson_solves,
        bae_over_cem_solves,
        cross_section_lines: default_lines(cfg.length)
            .iter()
            .map(|l| LineInfo {
                name: l.name.into(),
                start: l.start,
                end: l.end,
            })
            .collect(),
        artifacts,
    };
    ctx.out.write_json("manifest.json", &manifest)?;
    Ok(manifest)
}

/// Every stage in order, then the manifest.
pub fn run_all(ctx: &Context) -> Result<Manifest> {
    let (truth, _) = synthesize(ctx).map_err(|e| e.at_stage("synthesize"))?;
    let (stats, _) = compute_error_stats(ctx, &truth).map_err(|e| e.at_stage("error-stats"))?;
    for kind in ModelKind::ALL {
        let st = (kind == ModelKind::Bae).then_some(&stats);
        let (inv, _) = run_inversion(ctx, &truth, kind, st).map_err(|e| e.at_stage("invert"))?;
        run_posterior(ctx, &truth, kind, st, &inv.beta_map).map_err(|e| e.at_stage("posterior"))?;
    }
    report(ctx)
}

/// Synthetic data, writing the synthesis artifacts unless they are current.
pub fn truth_for(ctx: &Context) -> Result<Truth> {
    if ctx.fresh::<SynthesisSummary>("synthesis.json").is_some() {
        return synthesize_data(&ctx.setup);
    }
    Ok(synthesize(ctx)?.0)
}
