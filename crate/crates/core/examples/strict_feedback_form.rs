//! Full transformation of a hyperbolic system into strict-feedback form,
//! with the structure and consistency checks.
//!
//! Usage: `cargo run --example strict_feedback_form [config.toml]`

use std::path::PathBuf;

use hyperbolic_sff::config::ProjectConfig;
use hyperbolic_sff::pipeline::Transformation;
use hyperbolic_sff::sim::as_spec;
use hyperbolic_sff::verify::{structure_check_sff, transform_consistency};
use hyperbolic_sff::volterra::KernelSolverOptions;
use nalgebra::DMatrix;

fn main() -> hyperbolic_sff::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/asymmetric.toml")
        });
    let cfg = ProjectConfig::load(&path)?;
    let built = cfg.build()?;
    let tr = Transformation::compute(
        built.base(),
        &KernelSolverOptions::with_bc_mode(cfg.bc_mode),
    )?;
    println!(
        "n- = {}, n+ = {}, free boundary directions = {}",
        tr.sys.n_minus,
        tr.sys.n_plus,
        tr.algebra.delta_n()
    );
    println!(
        "x^-(0) gain of the x^-(0) trace at z = 1/2: {}",
        fmt(&tr.coeffs.a0_minus.at(cfg.grid / 2))
    );
    println!(
        "x^-(0) gain in the x^+ equations at z = 1/2: {}",
        fmt(&tr.sff.b0_tilde_plus.at(cfg.grid / 2))
    );

    println!(
        "original form:        {}",
        structure_check_sff(&as_spec(&tr.sys), &tr.algebra).summary()
    );
    println!(
        "strict-feedback form: {}",
        structure_check_sff(&tr.sff_spec(), &tr.algebra).summary()
    );
    let rep = transform_consistency(
        &tr.sys,
        &tr.kernels,
        &tr.coeffs,
        &tr.sff,
        &tr.fredholm,
        &tr.algebra,
        &cfg.simulation,
        cfg.seed,
    )?;
    println!("{}", rep.summary());
    Ok(())
}

fn fmt(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            r.iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    format!("[{}]", rows.join("; "))
}
