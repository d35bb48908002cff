//! Low-rank Laplace posterior around a MAP point: misfit-Hessian spectrum,
//! variance reduction and posterior samples.

use robin_bae::experiment::{invert, model_for, posterior, synthesize_data, ExperimentConfig, ModelKind, Setup};

fn main() -> robin_bae::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.inversion_mesh = Some([16, 16, 1]);
    cfg.synthesis_mesh = Some([32, 32, 2]);
    let setup = Setup::new(&cfg)?;
    let truth = synthesize_data(&setup)?;
    let (model, err) = model_for(&setup, &truth, ModelKind::Ref, None)?;
    let inv = invert(&setup, &model, &err, &truth.observed, ModelKind::Ref)?;

    let lr = posterior(&setup, &model, &err, &inv.beta_map, ModelKind::Ref)?;
    let spectrum = lr.spectrum();
    println!("leading eigenvalues: {:.4?}", &spectrum[..8]);
    println!("eigenvalue {} / eigenvalue 1 = {:.1e}", setup.coarse.q() + 1, spectrum[setup.coarse.q()] / spectrum[0]);
    println!("retained {} eigenpairs above {}", lr.rank(), lr.truncation());

    let prior_var = setup.beta_prior.pointwise_variance()?;
    let post_var = lr.pointwise_variance()?;
    let mean_ratio = post_var.iter().zip(&prior_var).map(|(p, q)| p / q).sum::<f64>() / post_var.len() as f64;
    println!("mean posterior/prior variance ratio {mean_ratio:.3}");

    for seed in 0..3 {
        let s = lr.sample(seed)?;
        let dev = s.iter().zip(lr.map()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("sample {seed}: max deviation from MAP {dev:.3}");
    }
    Ok(())
}
