//! Simulates the original system under the boundary feedback that zeroes
//! the target input, together with the intermediate and strict-feedback
//! forms, and compares the mapped trajectories.

use std::path::PathBuf;

use hyperbolic_sff::config::ProjectConfig;
use hyperbolic_sff::fredholm::invert_fredholm;
use hyperbolic_sff::model::StateSnapshot;
use hyperbolic_sff::pipeline::Transformation;
use hyperbolic_sff::sim::{as_closed_loop_spec, simulate_from};
use hyperbolic_sff::verify::consistency_initial_state;
use hyperbolic_sff::volterra::{apply_volterra, KernelSolverOptions};
use nalgebra::DVector;

fn main() -> hyperbolic_sff::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/scalar.toml");
    let cfg = ProjectConfig::load(&path)?;
    let built = cfg.build()?;
    let sys = built.base();
    let tr = Transformation::compute(sys, &KernelSolverOptions::default())?;
    let grid = sys.grid();

    let x0 = consistency_initial_state(&grid, sys.n_minus, sys.n_plus, cfg.seed);
    let zero = |_: f64| DVector::zeros(sys.n_minus);
    let closed_loop = simulate_from(
        &as_closed_loop_spec(sys, &tr.kernels),
        &cfg.simulation,
        &x0,
        &zero,
    )?;
    let to_sff = |s: &StateSnapshot| StateSnapshot {
        x_plus: invert_fredholm(&tr.fredholm, &s.x_plus),
        ..s.clone()
    };
    let w0 = apply_volterra(&tr.kernels, &x0);
    let intermediate = simulate_from(&tr.intermediate_spec(), &cfg.simulation, &w0, &zero)?;
    let sff = simulate_from(&tr.sff_spec(), &cfg.simulation, &to_sff(&w0), &zero)?;

    println!(
        "{} steps of dt = {:.3e} on {} cells",
        closed_loop.len() - 1,
        closed_loop.dt,
        grid.n_cells()
    );
    let last = closed_loop.len() - 1;
    for idx in [0, last / 4, last / 2, 3 * last / 4, last] {
        let mapped = apply_volterra(&tr.kernels, &closed_loop.snapshots[idx]);
        println!(
            "t = {:.3}: |x| = {:.4}  |w - T x| = {:.2e}  |sff - P T x| = {:.2e}",
            closed_loop.snapshots[idx].t,
            closed_loop.snapshots[idx].sup_norm(),
            intermediate.snapshots[idx].max_diff(&mapped),
            sff.snapshots[idx].max_diff(&to_sff(&mapped)),
        );
    }
    Ok(())
}
