//! Grid refinement study of the kernel residual and of the transformation
//! consistency.

use hyperbolic_sff::config::ProjectConfig;
use hyperbolic_sff::pipeline::Transformation;
use hyperbolic_sff::verify::{convergence_study, kernel_residual_volterra, transform_consistency};
use hyperbolic_sff::volterra::KernelSolverOptions;

fn main() -> hyperbolic_sff::Result<()> {
    let path =
        std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/scalar.toml");
    let cfg = ProjectConfig::load(&path)?;
    let opts = KernelSolverOptions::with_bc_mode(cfg.bc_mode);
    let grids = [25, 50, 100, 200];
    let residual = convergence_study("kernel_residual_volterra", &grids, &|n| {
        let tr = Transformation::compute(cfg.system.build(n)?.base(), &opts)?;
        Ok(kernel_residual_volterra(&tr.kernels, &tr.sys)
            .measurement("interior_residual")
            .unwrap_or(f64::NAN))
    })?;
    println!("{}", residual.summary());
    let consistency = convergence_study("transform_consistency", &grids, &|n| {
        let tr = Transformation::compute(cfg.system.build(n)?.base(), &opts)?;
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
        Ok(rep.measurement("max_discrepancy").unwrap_or(f64::NAN))
    })?;
    println!("{}", consistency.summary());
    Ok(())
}
