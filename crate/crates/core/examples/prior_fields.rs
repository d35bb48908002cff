//! Robin-coefficient prior: boundary variance artefact of the plain operator
//! versus the variance-weighted one, and a few prior draws written as CSV.

use robin_bae::experiment::output::OutputDir;
use robin_bae::fem::{NodalField, Tensor};
use robin_bae::mesh::SlabMesh;
use robin_bae::prior::{BoundaryVariant, EllipticPrior};

fn main() -> robin_bae::Result<()> {
    let bottom = SlabMesh::build(30, 30, 1, 1.0, 0.01, 3)?.extract_bottom()?;
    let (alpha, gamma) = (7.0, 0.01);
    let kappa = 1.42 * (gamma / alpha as f64).sqrt();
    for variant in [
        BoundaryVariant::Neumann,
        BoundaryVariant::Dirichlet,
        BoundaryVariant::Robin,
        BoundaryVariant::Weighted,
    ] {
        let prior = EllipticPrior::assemble(
            &bottom,
            alpha,
            Tensor::isotropic(2, gamma),
            kappa,
            NodalField::constant(&bottom, 1.0),
            variant,
        )?;
        let var = prior.pointwise_variance()?;
        let corner = var[0];
        let centre = var[var.len() / 2];
        println!("{variant:?}: variance corner {corner:.4e}, centre {centre:.4e}, sigma^2 {:.4e}", prior.sigma().powi(2));
    }

    let prior = EllipticPrior::assemble(
        &bottom,
        alpha,
        Tensor::isotropic(2, gamma),
        0.0,
        NodalField::constant(&bottom, 1.0),
        BoundaryVariant::Weighted,
    )?;
    let out = OutputDir::create(&std::env::temp_dir().join("robin-bae-prior"))?;
    for seed in 0..3 {
        let name = out.write_field(&format!("sample_{seed}.csv"), &bottom, &prior.sample(seed)?)?;
        println!("wrote {}", out.path(&name).display());
    }
    Ok(())
}
