//! Kernel `N(z)` of the ODE state transformation for PDE-ODE cascades and
//! the transformation itself.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ctrl_algebra::{hautus_check, BoundaryAlgebra};
use crate::model::{interp_nodes, resample, Grid1D, MatrixField1D, PdeOdeSystem};
use crate::sim::{as_pdeode_spec, Boundary, Channel, GeneralizedCouplingSpec, OdeBlock, OdeTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtsteinKernel {
    pub n: MatrixField1D,
    pub f_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub b_qperp: DMatrix<f64>,
}

/// Integrates `M' = F_bar M Lambda^+(z)^{-1}`, `M(0) = B Q^R` with classical
/// Runge-Kutta steps of size `h`, where `M = N Lambda^+`.
pub fn solve_n(sys: &PdeOdeSystem, algebra: &BoundaryAlgebra, grid: Grid1D) -> ArtsteinKernel {
    let lam_field = resample(&sys.base.lambda_plus, grid);
    let np = sys.base.n_plus;
    let lam: Vec<Vec<f64>> = (0..np).map(|i| lam_field.entry(i, i)).collect();
    let f_bar = &sys.f - &sys.b * &algebra.q_right * &sys.c;
    let rhs = |z: f64, m: &DMatrix<f64>| {
        let mut d = &f_bar * m;
        for (j, lj) in lam.iter().enumerate() {
            let v = interp_nodes(&grid, lj, z);
            d.column_mut(j).scale_mut(1.0 / v);
        }
        d
    };
    let h = grid.h();
    let mut m = &sys.b * &algebra.q_right;
    let mut n = MatrixField1D::zeros(grid, sys.n0(), np);
    let to_n = |m: &DMatrix<f64>, k: usize| {
        let mut out = m.clone();
        for (j, lj) in lam.iter().enumerate() {
            out.column_mut(j).scale_mut(1.0 / lj[k]);
        }
        out
    };
    n.set_node(0, &to_n(&m, 0));
    for k in 0..grid.n_cells() {
        let z = grid.z(k);
        let k1 = rhs(z, &m);
        let k2 = rhs(z + 0.5 * h, &(&m + &k1 * (0.5 * h)));
        let k3 = rhs(z + 0.5 * h, &(&m + &k2 * (0.5 * h)));
        let k4 = rhs(z + h, &(&m + &k3 * h));
        m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        n.set_node(k + 1, &to_n(&m, k + 1));
    }
    ArtsteinKernel {
        n,
        f_bar,
        b_bar: m,
        b_qperp: &sys.b * &algebra.q_perp,
    }
}

/// Hautus test on `(F_bar, [B_bar, B Q^perp])`.
pub fn controllability_preserved(kernel: &ArtsteinKernel) -> bool {
    let (n0, np, dn) = (
        kernel.f_bar.nrows(),
        kernel.b_bar.ncols(),
        kernel.b_qperp.ncols(),
    );
    let mut b = DMatrix::zeros(n0, np + dn);
    b.columns_mut(0, np).copy_from(&kernel.b_bar);
    b.columns_mut(np, dn).copy_from(&kernel.b_qperp);
    hautus_check(&kernel.f_bar, &b)
}

fn integral(kernel: &ArtsteinKernel, x_plus: &DMatrix<f64>) -> DVector<f64> {
    let grid = kernel.n.grid();
    assert_eq!(
        x_plus.ncols(),
        grid.n_nodes(),
        "state not on the kernel grid"
    );
    let mut acc = DVector::zeros(kernel.n.rows());
    for (k, wk) in grid.trapezoid_weights().iter().enumerate() {
        acc += kernel.n.at(k) * x_plus.column(k) * *wk;
    }
    acc
}

/// `xi_bar = xi - int_0^1 N(z) x^+(z) dz`.
pub fn apply_artstein(
    kernel: &ArtsteinKernel,
    xi: &DVector<f64>,
    x_plus: &DMatrix<f64>,
) -> DVector<f64> {
    xi - integral(kernel, x_plus)
}

/// `xi = xi_bar + int_0^1 N(z) x^+(z) dz`.
pub fn invert_artstein(
    kernel: &ArtsteinKernel,
    xi_bar: &DVector<f64>,
    x_plus: &DMatrix<f64>,
) -> DVector<f64> {
    xi_bar + integral(kernel, x_plus)
}

/// Strict-feedback form of the PDE-ODE cascade: the ODE is driven by
/// `x^+(1)` and the annihilator channel of `x^-(0)` only.
pub fn assemble_pdeode_sff(
    sys: &PdeOdeSystem,
    kernel: &ArtsteinKernel,
    algebra: &BoundaryAlgebra,
) -> GeneralizedCouplingSpec {
    let mut spec = as_pdeode_spec(sys);
    spec.label = "pdeode-sff".into();
    let mut traces = vec![OdeTrace {
        source: Channel::Plus,
        at: Boundary::One,
        gain: kernel.b_bar.clone(),
    }];
    if algebra.delta_n() > 0 {
        traces.push(OdeTrace {
            source: Channel::Minus,
            at: Boundary::Zero,
            gain: &kernel.b_qperp * algebra.second_partition_rows(),
        });
    }
    spec.ode = Some(OdeBlock {
        f: kernel.f_bar.clone(),
        traces,
    });
    let weights = kernel.n.map_nodes(|_, n| &sys.c * n);
    spec.bc0.weights = (!weights.is_zero()).then_some(weights);
    spec
}
