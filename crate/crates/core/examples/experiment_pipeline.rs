//! The whole experiment through the library: synthetic data, error
//! statistics, the three inversions, posteriors and the manifest.
//!
//! Usage: `cargo run --release --example experiment_pipeline [out-dir]`

use std::path::PathBuf;

use robin_bae::experiment::pipeline::{run_all, Context};
use robin_bae::experiment::ExperimentConfig;

fn main() -> robin_bae::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("robin-bae-run"));
    let mut cfg = ExperimentConfig::default();
    // Smaller than the defaults so the example finishes in seconds.
    cfg.inversion_mesh = Some([12, 12, 1]);
    cfg.synthesis_mesh = Some([24, 24, 2]);
    cfg.bae_samples = 100;

    let ctx = Context::new(&cfg, &out)?;
    let manifest = run_all(&ctx)?;
    for (name, entry) in &manifest.models {
        println!(
            "{name}: GN {:2}, Poisson solves {:4}, 2-sigma coverage {:.2}",
            entry.inversion.gn_iters, entry.inversion.poisson_solves, entry.posterior.coverage
        );
    }
    println!("trace ratio {:.1}", manifest.error_stats.trace_ratio);
    println!("{} artifacts in {}", manifest.artifacts.len(), out.display());
    Ok(())
}
