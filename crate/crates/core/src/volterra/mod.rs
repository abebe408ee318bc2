//! Volterra backstepping kernels, the transformed coefficients they induce,
//! and the state transformation itself.

mod characteristics;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ctrl_algebra::{right_inverse, BoundaryAlgebra};
use crate::error::{Error, Result};
use crate::model::{
    resample, trapezoid_weights, Grid1D, HyperbolicSystem, MatrixField1D, StateSnapshot,
    TriKernelField,
};

use characteristics::KernelProblem;

/// Boundary data for the `[K^{--}(z, zeta)]_{i>j}` entries, which need more
/// than the diagonal trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BcMode {
    /// Zero data on `z = 1`.
    #[default]
    #[serde(rename = "hu")]
    TopZero,
    /// Zero `zeta = 0` balance also for `i > j` wherever the characteristic
    /// reaches `z = 1`.
    #[serde(rename = "remark2")]
    TailBalance,
}

impl BcMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BcMode::TopZero => "hu",
            BcMode::TailBalance => "remark2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSolverOptions {
    pub bc_mode: BcMode,
    pub iter_tol: f64,
    pub max_iter: usize,
}

impl Default for KernelSolverOptions {
    fn default() -> Self {
        Self {
            bc_mode: BcMode::TopZero,
            iter_tol: 1e-10,
            max_iter: 200,
        }
    }
}

impl KernelSolverOptions {
    pub fn with_bc_mode(bc_mode: BcMode) -> Self {
        Self {
            bc_mode,
            ..Self::default()
        }
    }
}

/// Fixed-point iteration count and final sup-norm update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub last_update: f64,
}

/// Kernel pair from one characteristic solve.
#[derive(Debug, Clone)]
pub struct KernelPair {
    pub k_a: TriKernelField,
    pub k_b: TriKernelField,
    pub stats: SolveStats,
    /// Triangle nodes (in `tri_index` order) next to a line across which
    /// the kernels are only piecewise continuous.
    pub near_discontinuity: Vec<bool>,
}

/// The four kernel blocks on the triangle `0 <= zeta <= z <= 1`.
#[derive(Debug, Clone)]
pub struct VolterraKernelSet {
    pub k_mm: TriKernelField,
    pub k_mp: TriKernelField,
    pub k_pm: TriKernelField,
    pub k_pp: TriKernelField,
    pub bc_mode: BcMode,
    pub stats_minus: SolveStats,
    pub stats_plus: SolveStats,
    pub near_discontinuity_minus: Vec<bool>,
    pub near_discontinuity_plus: Vec<bool>,
}

/// Coefficients of the target system after the Volterra step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedCoefficients {
    pub a0_minus: MatrixField1D,
    pub a0_plus: MatrixField1D,
    pub b0_plus: MatrixField1D,
}

fn components(field: &MatrixField1D) -> Vec<Vec<f64>> {
    (0..field.rows()).map(|i| field.entry(i, i)).collect()
}

fn problem_from(sys: &HyperbolicSystem, grid: Grid1D) -> KernelProblem {
    let on_grid = |f: &MatrixField1D| resample(f, grid);
    KernelProblem {
        grid,
        lam_a: components(&on_grid(&sys.lambda_minus)),
        lam_b: components(&on_grid(&sys.lambda_plus)),
        a_aa: on_grid(&sys.a_mm),
        a_ab: on_grid(&sys.a_mp),
        a_ba: on_grid(&sys.a_pm),
        a_bb: on_grid(&sys.a_pp),
        q: sys.q.clone(),
    }
}

/// Diagonal traces `K(z, z)` of all four blocks.
pub fn diagonal_conditions(
    sys: &HyperbolicSystem,
) -> Result<(MatrixField1D, MatrixField1D, MatrixField1D, MatrixField1D)> {
    let grid = sys.grid();
    let (nm, np) = (sys.n_minus, sys.n_plus);
    let mut k_mm = MatrixField1D::zeros(grid, nm, nm);
    let mut k_mp = MatrixField1D::zeros(grid, nm, np);
    let mut k_pm = MatrixField1D::zeros(grid, np, nm);
    let mut k_pp = MatrixField1D::zeros(grid, np, np);
    let check = |node: usize, row: usize, col: usize, value: f64| {
        if value.abs() < 1e-12 {
            Err(Error::DegenerateVelocities {
                node,
                row,
                col,
                value,
            })
        } else {
            Ok(value)
        }
    };
    for k in 0..grid.n_nodes() {
        let lm = |i: usize| sys.lambda_minus.get(k, i, i);
        let lp = |i: usize| sys.lambda_plus.get(k, i, i);
        for i in 0..nm {
            for j in 0..nm {
                if i != j {
                    let den = check(k, i, j, lm(j) - lm(i))?;
                    k_mm.set(k, i, j, sys.a_mm.get(k, i, j) / den);
                }
            }
            for j in 0..np {
                let den = check(k, i, j, lp(j) + lm(i))?;
                k_mp.set(k, i, j, -sys.a_mp.get(k, i, j) / den);
            }
        }
        for i in 0..np {
            for j in 0..nm {
                let den = check(k, i, j, lm(j) + lp(i))?;
                k_pm.set(k, i, j, sys.a_pm.get(k, i, j) / den);
            }
            for j in 0..np {
                if i != j {
                    let den = check(k, i, j, lp(i) - lp(j))?;
                    k_pp.set(k, i, j, sys.a_pp.get(k, i, j) / den);
                }
            }
        }
    }
    Ok((k_mm, k_mp, k_pm, k_pp))
}

/// Solves for `K^{--}` and `K^{-+}` on `grid`.
///
/// Only positivity and strict ordering of the velocities are required, so
/// the same routine also serves the substituted plus problem.
pub fn solve_minus_kernels(
    sys: &HyperbolicSystem,
    grid: Grid1D,
    opts: &KernelSolverOptions,
) -> Result<KernelPair> {
    sys.check_shapes()?;
    let sol = problem_from(sys, grid).solve(opts)?;
    Ok(KernelPair {
        k_a: sol.k_aa,
        k_b: sol.k_ab,
        stats: sol.stats,
        near_discontinuity: sol.near_discontinuity,
    })
}

/// The plus kernel problem rewritten as a minus problem: the roles of the
/// two velocity groups swap, every coupling block changes sign so that the
/// velocities stay positive, and `Q` becomes `Q^R`.
pub fn substituted_system(sys: &HyperbolicSystem) -> Result<HyperbolicSystem> {
    let q_right = right_inverse(&sys.q)?;
    let neg = |f: &MatrixField1D| f.map_nodes(|_, m| -m);
    HyperbolicSystem::new(
        sys.lambda_plus.clone(),
        sys.lambda_minus.clone(),
        neg(&sys.a_pp),
        neg(&sys.a_pm),
        neg(&sys.a_mp),
        neg(&sys.a_mm),
        q_right,
        DMatrix::zeros(sys.n_plus, sys.n_minus),
    )
}

/// Solves for the plus kernels through [`substituted_system`].
///
/// `k_a` of the result is `K^{++}` and `k_b` is `K^{+-}`.
pub fn solve_plus_kernels(
    sys: &HyperbolicSystem,
    grid: Grid1D,
    opts: &KernelSolverOptions,
) -> Result<KernelPair> {
    solve_minus_kernels(&substituted_system(sys)?, grid, opts)
}

impl VolterraKernelSet {
    /// Solves all four blocks on the system's own grid.
    pub fn solve(sys: &HyperbolicSystem, opts: &KernelSolverOptions) -> Result<Self> {
        let grid = sys.grid();
        let minus = solve_minus_kernels(sys, grid, opts)?;
        let plus = solve_plus_kernels(sys, grid, opts)?;
        Ok(Self {
            k_mm: minus.k_a,
            k_mp: minus.k_b,
            k_pm: plus.k_b,
            k_pp: plus.k_a,
            bc_mode: opts.bc_mode,
            stats_minus: minus.stats,
            stats_plus: plus.stats,
            near_discontinuity_minus: minus.near_discontinuity,
            near_discontinuity_plus: plus.near_discontinuity,
        })
    }

    pub fn grid(&self) -> Grid1D {
        self.k_mm.grid()
    }

    pub fn n_minus(&self) -> usize {
        self.k_mm.rows()
    }

    pub fn n_plus(&self) -> usize {
        self.k_pp.rows()
    }

    pub fn max_abs(&self) -> f64 {
        [&self.k_mm, &self.k_mp, &self.k_pm, &self.k_pp]
            .iter()
            .map(|k| k.max_abs())
            .fold(0.0, f64::max)
    }

    /// Full `(n- + n+)`-square kernel matrix at node `(k, l)`.
    fn block_at(&self, k: usize, l: usize) -> DMatrix<f64> {
        let (nm, np) = (self.n_minus(), self.n_plus());
        let mut m = DMatrix::zeros(nm + np, nm + np);
        m.view_mut((0, 0), (nm, nm)).copy_from(&self.k_mm.at(k, l));
        m.view_mut((0, nm), (nm, np)).copy_from(&self.k_mp.at(k, l));
        m.view_mut((nm, 0), (np, nm)).copy_from(&self.k_pm.at(k, l));
        m.view_mut((nm, nm), (np, np))
            .copy_from(&self.k_pp.at(k, l));
        m
    }
}

/// Keeps the strictly lower triangular part, setting everything else to 0.
fn strictly_lower(m: DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(
        m.nrows(),
        m.ncols(),
        |i, j| if i > j { m[(i, j)] } else { 0.0 },
    )
}

/// Coefficients of the `x^-(0)` traces in the target system.
pub fn extract_coupling_matrices(
    kernels: &VolterraKernelSet,
    sys: &HyperbolicSystem,
    algebra: &BoundaryAlgebra,
) -> TransformedCoefficients {
    let grid = kernels.grid();
    let lam_m0 = sys.lambda_minus.at(0);
    let lam_p0 = sys.lambda_plus.at(0);
    let (nm, np, dn) = (sys.n_minus, sys.n_plus, algebra.delta_n());
    let mut a0_minus = MatrixField1D::zeros(grid, nm, nm);
    let mut a0_plus = MatrixField1D::zeros(grid, np, np);
    let mut b0_plus = MatrixField1D::zeros(grid, np, dn);
    for k in 0..grid.n_nodes() {
        let k_mm = kernels.k_mm.at(k, 0);
        let k_mp = kernels.k_mp.at(k, 0);
        let k_pm = kernels.k_pm.at(k, 0);
        let k_pp = kernels.k_pp.at(k, 0);
        let am = -&k_mp * &lam_p0 * &algebra.q + &k_mm * &lam_m0;
        let ap = &k_pm * &lam_m0 * &algebra.q_right - &k_pp * &lam_p0;
        a0_minus.set_node(k, &strictly_lower(am));
        a0_plus.set_node(k, &strictly_lower(ap));
        if dn > 0 {
            b0_plus.set_node(k, &(&k_pm * &lam_m0 * &algebra.q_perp));
        }
    }
    TransformedCoefficients {
        a0_minus,
        a0_plus,
        b0_plus,
    }
}

fn stacked(snapshot: &StateSnapshot) -> DMatrix<f64> {
    let (nm, np) = (snapshot.x_minus.nrows(), snapshot.x_plus.nrows());
    let cols = snapshot.x_minus.ncols();
    let mut x = DMatrix::zeros(nm + np, cols);
    x.rows_mut(0, nm).copy_from(&snapshot.x_minus);
    x.rows_mut(nm, np).copy_from(&snapshot.x_plus);
    x
}

fn unstacked(template: &StateSnapshot, x: DMatrix<f64>) -> StateSnapshot {
    let nm = template.x_minus.nrows();
    let np = template.x_plus.nrows();
    StateSnapshot {
        t: template.t,
        x_minus: x.rows(0, nm).clone_owned(),
        x_plus: x.rows(nm, np).clone_owned(),
        xi: template.xi.clone(),
    }
}

fn check_snapshot(kernels: &VolterraKernelSet, snapshot: &StateSnapshot) {
    assert_eq!(
        snapshot.x_minus.ncols(),
        kernels.grid().n_nodes(),
        "snapshot is not sampled on the kernel grid"
    );
    assert_eq!(snapshot.x_minus.nrows(), kernels.n_minus());
    assert_eq!(snapshot.x_plus.nrows(), kernels.n_plus());
}

/// `x_bar(z) = x(z) - int_0^z K(z, zeta) x(zeta) dzeta` with trapezoid
/// quadrature at every node.
pub fn apply_volterra(kernels: &VolterraKernelSet, snapshot: &StateSnapshot) -> StateSnapshot {
    check_snapshot(kernels, snapshot);
    let grid = kernels.grid();
    let h = grid.h();
    let x = stacked(snapshot);
    let mut out = x.clone();
    for k in 1..grid.n_nodes() {
        let w = trapezoid_weights(k + 1, h);
        let mut acc = DVector::zeros(x.nrows());
        for (l, wl) in w.iter().enumerate() {
            acc += kernels.block_at(k, l) * x.column(l) * *wl;
        }
        let col = out.column(k) - acc;
        out.set_column(k, &col);
    }
    unstacked(snapshot, out)
}

/// Inverse of [`apply_volterra`] by forward substitution over the nodes.
pub fn invert_volterra(
    kernels: &VolterraKernelSet,
    snapshot_bar: &StateSnapshot,
) -> Result<StateSnapshot> {
    check_snapshot(kernels, snapshot_bar);
    let grid = kernels.grid();
    let h = grid.h();
    let xb = stacked(snapshot_bar);
    let dim = xb.nrows();
    let mut x = DMatrix::zeros(dim, xb.ncols());
    x.set_column(0, &xb.column(0));
    for k in 1..grid.n_nodes() {
        let w = trapezoid_weights(k + 1, h);
        let mut rhs = xb.column(k).clone_owned();
        for l in 0..k {
            rhs += kernels.block_at(k, l) * x.column(l) * w[l];
        }
        let local = DMatrix::identity(dim, dim) - kernels.block_at(k, k) * w[k];
        let lu = local.lu();
        let xk = lu.solve(&rhs).ok_or(Error::SingularStep { node: k })?;
        x.set_column(k, &xk);
    }
    Ok(unstacked(snapshot_bar, x))
}

/// Boundary input `u = int_0^1 (K^{--}(1, .) x^- + K^{-+}(1, .) x^+) - R x^+(1) + u_bar`.
pub fn feedback_u(
    kernels: &VolterraKernelSet,
    r: &DMatrix<f64>,
    snapshot: &StateSnapshot,
    u_bar: &DVector<f64>,
) -> DVector<f64> {
    check_snapshot(kernels, snapshot);
    let grid = kernels.grid();
    let n = grid.n_cells();
    let w = grid.trapezoid_weights();
    let mut u = u_bar.clone();
    for (l, wl) in w.iter().enumerate() {
        u += kernels.k_mm.at(n, l) * snapshot.x_minus.column(l) * *wl;
        u += kernels.k_mp.at(n, l) * snapshot.x_plus.column(l) * *wl;
    }
    u -= r * snapshot.x_plus.column(n);
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctrl_algebra::build_boundary_algebra;
    use approx::assert_abs_diff_eq;

    fn scalar(grid: Grid1D, lm: f64, lp: f64, a: [f64; 4]) -> HyperbolicSystem {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        HyperbolicSystem::constant(
            grid,
            &[lm],
            &[lp],
            m(a[0]),
            m(a[1]),
            m(a[2]),
            m(a[3]),
            m(1.0),
            m(0.0),
        )
        .unwrap()
    }

    #[test]
    fn diagonal_traces_of_scalar_examples() {
        let grid = Grid1D::new(10).unwrap();
        let (mm, mp, pm, pp) = diagonal_conditions(&scalar(grid, 1.0, 1.0, [0.0; 4])).unwrap();
        assert!(mm.is_zero() && mp.is_zero() && pm.is_zero() && pp.is_zero());
        let (_, mp, _, _) =
            diagonal_conditions(&scalar(grid, 1.0, 1.0, [0.0, 0.7, 0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(mp.get(3, 0, 0), -0.35, epsilon = 1e-15);
        let (_, _, pm, _) =
            diagonal_conditions(&scalar(grid, 2.0, 1.0, [0.0, 0.0, 3.0, 0.0])).unwrap();
        assert_abs_diff_eq!(pm.get(7, 0, 0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_coupling_gives_zero_kernels() {
        let grid = Grid1D::new(16).unwrap();
        let set = VolterraKernelSet::solve(&scalar(grid, 1.0, 1.0, [0.0; 4]), &Default::default())
            .unwrap();
        assert_eq!(set.max_abs(), 0.0);
    }

    #[test]
    fn scalar_kernel_diagonal_matches_trace() {
        let grid = Grid1D::new(40).unwrap();
        let sys = scalar(grid, 1.0, 1.0, [0.0, 1.0, 0.0, 0.0]);
        let (k_mm, k_mp) = {
            let p = solve_minus_kernels(&sys, grid, &Default::default()).unwrap();
            (p.k_a, p.k_b)
        };
        for k in 0..=40 {
            assert_abs_diff_eq!(k_mp.get(k, k, 0, 0), -0.5, epsilon = 1e-14);
            assert_abs_diff_eq!(k_mm.get(k, 0, 0, 0), k_mp.get(k, 0, 0, 0), epsilon = 1e-9);
        }
        let plus = solve_plus_kernels(&sys, grid, &Default::default()).unwrap();
        assert_eq!(plus.k_a.max_abs(), 0.0);
        assert_eq!(plus.k_b.max_abs(), 0.0);
    }

    #[test]
    fn plus_diagonal_matches_trace() {
        let grid = Grid1D::new(20).unwrap();
        let sys = scalar(grid, 2.0, 1.0, [0.0, 0.0, 3.0, 0.0]);
        let plus = solve_plus_kernels(&sys, grid, &Default::default()).unwrap();
        for k in 0..=20 {
            assert_abs_diff_eq!(plus.k_b.get(k, k, 0, 0), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn transform_fixes_origin_and_constant_kernel_example() {
        let grid = Grid1D::new(8).unwrap();
        let sys = scalar(grid, 1.0, 1.0, [0.0; 4]);
        let mut set = VolterraKernelSet::solve(&sys, &Default::default()).unwrap();
        for k in 0..=8 {
            for l in 0..=k {
                set.k_mm.set(k, l, 0, 0, 1.0);
            }
        }
        let mut snap = StateSnapshot::zeros(&grid, 1, 1, None);
        snap.x_minus.fill(1.0);
        let bar = apply_volterra(&set, &snap);
        for k in 0..=8 {
            assert_abs_diff_eq!(bar.x_minus[(0, k)], 1.0 - grid.z(k), epsilon = 1e-15);
        }
        let back = invert_volterra(&set, &bar).unwrap();
        assert!(back.max_diff(&snap) < 1e-12);
        let u = feedback_u(&set, &DMatrix::zeros(1, 1), &snap, &DVector::zeros(1));
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn feedback_reduces_to_u_bar_and_trace() {
        let grid = Grid1D::new(8).unwrap();
        let sys = scalar(grid, 1.0, 1.0, [0.0; 4]);
        let set = VolterraKernelSet::solve(&sys, &Default::default()).unwrap();
        let mut snap = StateSnapshot::zeros(&grid, 1, 1, None);
        snap.x_plus[(0, 8)] = 0.25;
        let ub = DVector::from_element(1, 2.0);
        assert_eq!(feedback_u(&set, &DMatrix::zeros(1, 1), &snap, &ub)[0], 2.0);
        assert_eq!(
            feedback_u(&set, &DMatrix::identity(1, 1), &snap, &ub)[0],
            1.75
        );
    }

    #[test]
    fn coupling_matrices_have_exact_structure() {
        let grid = Grid1D::new(12).unwrap();
        let sys = scalar(grid, 1.0, 1.0, [0.0, 1.0, 0.5, 0.0]);
        let set = VolterraKernelSet::solve(&sys, &Default::default()).unwrap();
        let alg = build_boundary_algebra(&sys.q).unwrap();
        let tc = extract_coupling_matrices(&set, &sys, &alg);
        assert!(tc.a0_minus.is_zero() && tc.a0_plus.is_zero());
        assert_eq!(tc.b0_plus.cols(), 0);
    }
}
