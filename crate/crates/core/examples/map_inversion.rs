//! Inexact Gauss-Newton MAP estimate of the Robin coefficient from
//! synthetic data, with the per-iteration convergence table.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use robin_bae::fem::{NodalField, Tensor};
use robin_bae::forward::{ErrorModel, SlabProblem};
use robin_bae::mesh::SlabMesh;
use robin_bae::optimizer::{solve_map, GnConfig, RobinMapProblem};
use robin_bae::prior::{BoundaryVariant, EllipticPrior};

fn main() -> robin_bae::Result<()> {
    let mesh = SlabMesh::build(20, 20, 2, 1.0, 0.01, 3)?;
    let points = robin_bae::experiment::config::default_observation_layout(1.0)
        .iter()
        .map(|p| vec![p[0], p[1], 0.01])
        .collect::<Vec<_>>();
    let problem = Arc::new(SlabProblem::with_unit_flux(mesh, &points)?);
    let model = problem.model(&NodalField::constant(problem.volume(), 0.0))?;
    let prior = EllipticPrior::assemble(
        problem.bottom(),
        7.0,
        Tensor::isotropic(2, 0.01),
        0.0,
        NodalField::constant(problem.bottom(), 1.0),
        BoundaryVariant::Weighted,
    )?;

    let truth = prior.sample(7)?;
    let clean = model.evaluate(&truth)?;
    let range = clean.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - clean.iter().cloned().fold(f64::INFINITY, f64::min);
    let delta = 0.01 * range;
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let data: Vec<f64> = clean
        .iter()
        .map(|d| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            d + delta * xi
        })
        .collect();

    let err = ErrorModel::noise_only(data.len(), delta)?;
    let map = RobinMapProblem::new(&model, &prior, &err, &data)?;
    let (beta, record) = solve_map(&map, prior.mean().values(), &GnConfig::default())?;

    let mut table = Vec::new();
    record.write_csv(&mut table).expect("writing to memory");
    print!("{}", String::from_utf8_lossy(&table));
    let rms = (beta.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / beta.len() as f64).sqrt();
    println!(
        "converged {} after {} GN / {} CG iterations, {} Poisson solves; rms error {rms:.3}",
        record.converged,
        record.gn_iters(),
        record.total_cg(),
        record.total_solves()
    );
    Ok(())
}
