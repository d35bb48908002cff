//! Approximation-error statistics for a coarse model with fixed conductivity
//! against a finer one with random conductivity, and the dominance check.

use robin_bae::bae::{compute_error_stats, dominance_check, Conductivity};
use robin_bae::experiment::{noise_covariance, ExperimentConfig, Setup};

fn main() -> robin_bae::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.inversion_mesh = Some([12, 12, 1]);
    cfg.synthesis_mesh = Some([24, 24, 2]);
    let setup = Setup::new(&cfg)?;
    let coarse = setup.coarse.model(&setup.a_star)?;

    let stats = compute_error_stats(
        &setup.fine,
        &coarse,
        Conductivity::Prior(&setup.a_prior_fine),
        &setup.beta_prior,
        100,
        cfg.seed("bae"),
    )?;
    let delta = 2.5e-3;
    let noise = noise_covariance(stats.q(), delta);
    let report = dominance_check(&stats, &vec![0.0; stats.q()], &noise);
    println!("r = {}, q = {}", stats.r, stats.q());
    println!("trace ratio {:.1}", stats.trace() / noise.trace());
    println!(
        "globally dominated: {}, components dominated: {}/{}",
        report.global,
        report.components.iter().filter(|c| c.dominated).count(),
        report.components.len()
    );
    println!("mean error at the first 5 points: {:.4?}", &stats.eps_mean[..5]);
    Ok(())
}
