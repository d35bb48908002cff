//! Forward solve, observations and a finite-difference check of the
//! adjoint gradient on a small 3D slab.

use std::sync::Arc;

use robin_bae::fem::{NodalField, Tensor};
use robin_bae::forward::{ErrorModel, SlabProblem};
use robin_bae::mesh::SlabMesh;
use robin_bae::prior::{BoundaryVariant, EllipticPrior};

fn main() -> robin_bae::Result<()> {
    let mesh = SlabMesh::build(16, 16, 2, 1.0, 0.01, 3)?;
    let points: Vec<Vec<f64>> = [[0.25, 0.25], [0.75, 0.25], [0.5, 0.5], [0.25, 0.75], [0.75, 0.75]]
        .iter()
        .map(|p| vec![p[0], p[1], 0.01])
        .collect();
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

    let truth = prior.sample(1)?;
    let data = model.evaluate(&truth)?;
    println!("observations: {data:.4?}");

    let err = ErrorModel::noise_only(data.len(), 1e-3)?;
    let beta = prior.sample(2)?;
    let state = model.linearize(&beta)?;
    let (cost, grad) = model.misfit_gradient(&state, &data, &err)?;
    let dir = prior.sample(3)?;
    let exact: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
    println!("misfit {cost:.4e}, directional derivative {exact:.8e}");
    for k in 2..8 {
        let h = 10f64.powi(-k);
        let at = |t: f64| -> robin_bae::Result<f64> {
            let b: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b + t * d).collect();
            model.misfit_cost(&model.linearize(&b)?, &data, &err)
        };
        let fd = (at(h)? - at(-h)?) / (2.0 * h);
        println!("h = 1e-{k}: relative error {:.2e}", (fd - exact).abs() / exact.abs());
    }
    println!("Poisson solves: {:?}", model.counts());
    Ok(())
}
