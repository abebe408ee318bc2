//! ODE-state transformation of a PDE-ODE cascade: kernel, closed-loop ODE
//! data and the consistency check.
//!
//! Usage: `cargo run --example pdeode_cascade [config.toml]`

use std::path::PathBuf;

use hyperbolic_sff::artstein::{assemble_pdeode_sff, controllability_preserved};
use hyperbolic_sff::config::{BuiltSystem, ProjectConfig};
use hyperbolic_sff::pipeline::pdeode_transformation;
use hyperbolic_sff::sim::as_pdeode_spec;
use hyperbolic_sff::verify::{artstein_consistency, structure_check_sff};
use nalgebra::DMatrix;

fn main() -> hyperbolic_sff::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/pdeode.toml")
        });
    let cfg = ProjectConfig::load(&path)?;
    let BuiltSystem::PdeOde(sys) = cfg.build()? else {
        return Err(hyperbolic_sff::Error::InvalidSystem(
            "expected kind = \"pde-ode\"".into(),
        ));
    };
    let (algebra, ker) = pdeode_transformation(&sys)?;
    println!("F_bar = {}", fmt(&ker.f_bar));
    println!("B_bar = {}", fmt(&ker.b_bar));
    println!(
        "(F_bar, B_bar) controllable: {}",
        controllability_preserved(&ker)
    );
    let grid = ker.n.grid();
    for k in [0, grid.n_cells() / 2, grid.n_cells()] {
        println!("N({:.2}) = {}", grid.z(k), fmt(&ker.n.at(k)));
    }
    println!(
        "cascade:                {}",
        structure_check_sff(&as_pdeode_spec(&sys), &algebra).summary()
    );
    println!(
        "strict-feedback form:   {}",
        structure_check_sff(&assemble_pdeode_sff(&sys, &ker, &algebra), &algebra).summary()
    );
    println!(
        "{}",
        artstein_consistency(&sys, &ker, &algebra, &cfg.simulation, cfg.seed)?.summary()
    );
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
