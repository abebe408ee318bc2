//! Volterra kernels of the scalar example and their residual report.
//!
//! Usage: `cargo run --example volterra_kernels [config.toml] [cells]`

use std::path::PathBuf;

use hyperbolic_sff::config::ProjectConfig;
use hyperbolic_sff::verify::kernel_residual_volterra;
use hyperbolic_sff::volterra::{KernelSolverOptions, VolterraKernelSet};

fn main() -> hyperbolic_sff::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/scalar.toml")
    });
    let mut cfg = ProjectConfig::load(&path)?;
    if let Some(n) = args.next().and_then(|s| s.parse().ok()) {
        cfg.grid = n;
    }
    let built = cfg.build()?;
    let sys = built.base();
    let ks = VolterraKernelSet::solve(sys, &KernelSolverOptions::with_bc_mode(cfg.bc_mode))?;
    println!(
        "grid {}: {} sweeps for the minus kernels, {} for the plus kernels",
        cfg.grid, ks.stats_minus.iterations, ks.stats_plus.iterations
    );
    let n = cfg.grid;
    for (z, zeta) in [(n, 0), (n, n / 2), (n / 2, 0), (n / 2, n / 4)] {
        println!(
            "K_mp({:.2}, {:.2}) = {:+.6}   K_pp({:.2}, {:.2}) = {:+.6}",
            z as f64 / n as f64,
            zeta as f64 / n as f64,
            ks.k_mp.get(z, zeta, 0, 0),
            z as f64 / n as f64,
            zeta as f64 / n as f64,
            ks.k_pp.get(z, zeta, 0, 0)
        );
    }
    println!("{}", kernel_residual_volterra(&ks, sys).summary());
    Ok(())
}
