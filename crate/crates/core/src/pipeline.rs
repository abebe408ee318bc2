//! End-to-end construction: boundary algebra, Volterra kernels, target
//! coefficients, Fredholm kernel and strict-feedback coefficients.

use crate::artstein::{solve_n, ArtsteinKernel};
use crate::ctrl_algebra::{build_boundary_algebra, kalman_check, BoundaryAlgebra};
use crate::error::{Error, Result};
use crate::fredholm::{sff_coefficients, solve_pi, FredholmKernel, SffCoefficients};
use crate::model::{validate_system, HyperbolicSystem, PdeOdeSystem};
use crate::sim::{as_intermediate_spec, as_sff_spec, GeneralizedCouplingSpec};
use crate::volterra::{
    extract_coupling_matrices, KernelSolverOptions, TransformedCoefficients, VolterraKernelSet,
};

/// Every ingredient of the transformation of a hyperbolic system.
#[derive(Debug, Clone)]
pub struct Transformation {
    pub sys: HyperbolicSystem,
    pub algebra: BoundaryAlgebra,
    pub kernels: VolterraKernelSet,
    pub coeffs: TransformedCoefficients,
    pub fredholm: FredholmKernel,
    pub sff: SffCoefficients,
}

impl Transformation {
    /// Validates the system and computes all kernels on its grid.
    pub fn compute(sys: &HyperbolicSystem, opts: &KernelSolverOptions) -> Result<Self> {
        let report = validate_system(sys);
        if !report.is_valid() {
            let msgs: Vec<String> = report
                .violations
                .iter()
                .map(|v| v.message.clone())
                .collect();
            return Err(Error::InvalidSystem(msgs.join("; ")));
        }
        let algebra = build_boundary_algebra(&sys.q)?;
        let kernels = VolterraKernelSet::solve(sys, opts)?;
        let coeffs = extract_coupling_matrices(&kernels, sys, &algebra);
        let fredholm = solve_pi(&coeffs.a0_plus, &sys.lambda_plus, sys.grid());
        let sff = sff_coefficients(&fredholm, &sys.lambda_plus, &coeffs.b0_plus);
        Ok(Self {
            sys: sys.clone(),
            algebra,
            kernels,
            coeffs,
            fredholm,
            sff,
        })
    }

    pub fn intermediate_spec(&self) -> GeneralizedCouplingSpec {
        as_intermediate_spec(&self.coeffs, &self.sys, &self.algebra)
    }

    pub fn sff_spec(&self) -> GeneralizedCouplingSpec {
        as_sff_spec(&self.sff, &self.coeffs, &self.sys, &self.algebra)
    }
}

/// Boundary algebra and ODE kernel of a PDE-ODE cascade.
pub fn pdeode_transformation(sys: &PdeOdeSystem) -> Result<(BoundaryAlgebra, ArtsteinKernel)> {
    sys.check_shapes()?;
    if !kalman_check(&sys.f, &sys.b) {
        return Err(Error::InvalidSystem(
            "the pair (F, B) is not controllable".into(),
        ));
    }
    let algebra = build_boundary_algebra(&sys.base.q)?;
    let kernel = solve_n(sys, &algebra, sys.base.grid());
    Ok((algebra, kernel))
}
