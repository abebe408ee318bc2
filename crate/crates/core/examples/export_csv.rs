//! Writes the kernels and coefficients of a configuration to CSV files.
//!
//! Usage: `cargo run --example export_csv [config.toml] [out-dir]`

use std::path::PathBuf;

use hyperbolic_sff::config::ProjectConfig;
use hyperbolic_sff::export::{write_field_csv, write_sq_kernel_csv, write_tri_kernel_csv};
use hyperbolic_sff::pipeline::Transformation;
use hyperbolic_sff::volterra::KernelSolverOptions;

fn main() -> hyperbolic_sff::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/coupled.toml")
    });
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("hyperbolic-sff-export"));
    let cfg = ProjectConfig::load(&path)?;
    let built = cfg.build()?;
    let tr = Transformation::compute(
        built.base(),
        &KernelSolverOptions::with_bc_mode(cfg.bc_mode),
    )?;
    write_tri_kernel_csv(&out.join("K_mp.csv"), "K_mp", &tr.kernels.k_mp)?;
    write_tri_kernel_csv(&out.join("K_pp.csv"), "K_pp", &tr.kernels.k_pp)?;
    write_sq_kernel_csv(&out.join("P_I.csv"), "P_I", &tr.fredholm.p)?;
    write_field_csv(
        &out.join("A0_tilde_plus.csv"),
        "A0_tilde_plus",
        &tr.sff.a0_tilde_plus,
    )?;
    println!("wrote 4 files to {}", out.display());
    Ok(())
}
