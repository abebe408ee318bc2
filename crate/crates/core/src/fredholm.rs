//! Fredholm-type transformation that moves the `x^+(0)` trace couplings of
//! the intermediate system to `x^+(1)`.
//!
//! The kernel is strictly lower triangular, so both the coefficient
//! equations and the inverse transformation close by forward substitution
//! over the component index.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{interp_nodes, resample, Grid1D, MatrixField1D, SqKernelField};

const EPS: f64 = 1e-12;

/// Kernel `P_I(z, zeta)` on the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FredholmKernel {
    pub p: SqKernelField,
    /// Per strictly lower entry and node (row-major `k * n_nodes + l`): the
    /// `zeta = 0` foot of the backward characteristic, or `None` if it
    /// leaves through `z = 0`.
    feet: Vec<Vec<Option<f64>>>,
    /// Per strictly lower entry: cells `[z_p, z_{p+1}]` across which the
    /// boundary data jumps.
    data_breaks: Vec<Vec<usize>>,
}

/// Coefficients of the strict-feedback form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SffCoefficients {
    pub a0_tilde_plus: MatrixField1D,
    pub b0_tilde_plus: MatrixField1D,
}

impl FredholmKernel {
    pub fn grid(&self) -> Grid1D {
        self.p.grid()
    }

    pub fn n_plus(&self) -> usize {
        self.p.rows()
    }

    /// Nodes whose 3x3 neighbourhood straddles a discontinuity of some
    /// entry: the characteristic through the origin, or a characteristic
    /// carrying a jump of the boundary data. Row-major over `(k, l)`.
    pub fn near_discontinuity(&self) -> Vec<bool> {
        let grid = self.grid();
        let nn = grid.n_nodes();
        let mut mask = vec![false; nn * nn];
        for (feet, breaks) in self.feet.iter().zip(&self.data_breaks) {
            for k in 0..nn {
                for l in 0..nn {
                    let c = feet[k * nn + l].is_some();
                    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                    let mut mixed = false;
                    for kk in k.saturating_sub(1)..=(k + 1).min(nn - 1) {
                        for ll in l.saturating_sub(1)..=(l + 1).min(nn - 1) {
                            match feet[kk * nn + ll] {
                                Some(z) => {
                                    mixed |= !c;
                                    lo = lo.min(z);
                                    hi = hi.max(z);
                                }
                                None => mixed |= c,
                            }
                        }
                    }
                    let straddles = lo <= hi
                        && breaks
                            .iter()
                            .any(|&p| lo <= grid.z(p + 1) + EPS && hi >= grid.z(p) - EPS);
                    mask[k * nn + l] |= mixed || straddles;
                }
            }
        }
        mask
    }
}

/// Cells where a sampled profile jumps: the increment departs from the
/// neighbouring increments by more than the grid scale, and by clearly more
/// than the departures in the neighbouring cells (a kink departs equally in
/// two adjacent cells).
fn jump_cells(values: &[f64], h: f64) -> Vec<usize> {
    let scale = 1.0 + values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let d: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let m = d.len();
    let dev = |p: usize| -> f64 {
        let pred = match (p > 0, p + 1 < m) {
            (true, true) => 0.5 * (d[p - 1] + d[p + 1]),
            (true, false) => d[p - 1],
            (false, true) => d[p + 1],
            (false, false) => return 0.0,
        };
        (d[p] - pred).abs()
    };
    let devs: Vec<f64> = (0..m).map(dev).collect();
    (0..m)
        .filter(|&p| {
            let left = if p > 0 { devs[p - 1] } else { 0.0 };
            let right = devs.get(p + 1).copied().unwrap_or(0.0);
            devs[p] > 2.0 * h * scale && devs[p] > 1.5 * left.max(right)
        })
        .collect()
}

/// Foot point of the backward characteristic `dz/dzeta = lam_i(z) / lam_j(zeta)`
/// from `(z_k, zeta_l)`: `Some(z*)` on `zeta = 0`, `None` if it leaves
/// through `z = 0`.
fn foot_point(grid: &Grid1D, lam_i: &[f64], lam_j: &[f64], k: usize, l: usize) -> Option<f64> {
    let mut z = grid.z(k);
    for m in (1..=l).rev() {
        let (za, zeta_a, zeta_b) = (z, grid.z(m), grid.z(m - 1));
        let step = zeta_b - zeta_a;
        let slope =
            |z: f64, zeta: f64| interp_nodes(grid, lam_i, z) / interp_nodes(grid, lam_j, zeta);
        let z_mid = za + 0.5 * step * slope(za.max(0.0), zeta_a);
        z = za + step * slope(z_mid.max(0.0), zeta_a + 0.5 * step);
        if z < -EPS {
            return None;
        }
        if z <= EPS && m > 1 {
            return None;
        }
    }
    Some(z.max(0.0))
}

/// Solves the transport equations of the Fredholm kernel entry by entry.
pub fn solve_pi(
    a0_plus: &MatrixField1D,
    lambda_plus: &MatrixField1D,
    grid: Grid1D,
) -> FredholmKernel {
    let np = lambda_plus.rows();
    let nn = grid.n_nodes();
    let a0 = resample(a0_plus, grid);
    let lam = resample(lambda_plus, grid);
    let comps: Vec<Vec<f64>> = (0..np).map(|i| lam.entry(i, i)).collect();
    let mut p = SqKernelField::zeros(grid, np, np);
    let mut feet = Vec::new();
    let mut data_breaks = Vec::new();
    for i in 0..np {
        for j in 0..i {
            let entry_feet: Vec<Option<f64>> = (0..nn * nn)
                .into_par_iter()
                .map(|idx| foot_point(&grid, &comps[i], &comps[j], idx / nn, idx % nn))
                .collect();
            for (idx, foot) in entry_feet.iter().enumerate() {
                let (k, l) = (idx / nn, idx % nn);
                let v = foot.map_or(0.0, |z| a0.interp_entry(z, i, j) / comps[j][l]);
                p.set(k, l, i, j, v);
            }
            feet.push(entry_feet);
            data_breaks.push(jump_cells(&a0.entry(i, j), grid.h()));
        }
    }
    FredholmKernel {
        p,
        feet,
        data_breaks,
    }
}

/// Solves `X(z) + int_0^1 P_I(z, zeta) X(zeta) dzeta = rhs(z)` row by row.
fn forward_substitute(
    kernel: &FredholmKernel,
    rhs: &MatrixField1D,
    strictly_lower: bool,
) -> MatrixField1D {
    let grid = kernel.grid();
    let nn = grid.n_nodes();
    let w = grid.trapezoid_weights();
    let (rows, cols) = rhs.shape();
    let mut out = MatrixField1D::zeros(grid, rows, cols);
    for i in 0..rows {
        for k in 0..nn {
            for j in 0..cols {
                if strictly_lower && j >= i {
                    continue;
                }
                let mut v = rhs.get(k, i, j);
                for r in 0..i {
                    for (l, wl) in w.iter().enumerate() {
                        v -= wl * kernel.p.get(k, l, i, r) * out.get(l, r, j);
                    }
                }
                out.set(k, i, j, v);
            }
        }
    }
    out
}

/// `A~0+` from `P_I(z, 1) Lambda^+(1)`.
pub fn compute_tilde_a0(kernel: &FredholmKernel, lambda_plus: &MatrixField1D) -> MatrixField1D {
    let grid = kernel.grid();
    let n = grid.n_cells();
    let lam1 = lambda_plus.at(lambda_plus.grid().n_cells());
    let rhs = MatrixField1D::from_nodes(
        grid,
        &(0..=n)
            .map(|k| kernel.p.at(k, n) * &lam1)
            .collect::<Vec<DMatrix<f64>>>(),
    )
    .expect("node count matches grid");
    forward_substitute(kernel, &rhs, true)
}

/// `B~0+` from `B0+`.
pub fn compute_tilde_b0(kernel: &FredholmKernel, b0_plus: &MatrixField1D) -> MatrixField1D {
    forward_substitute(kernel, &resample(b0_plus, kernel.grid()), false)
}

/// Both strict-feedback coefficients at once.
pub fn sff_coefficients(
    kernel: &FredholmKernel,
    lambda_plus: &MatrixField1D,
    b0_plus: &MatrixField1D,
) -> SffCoefficients {
    SffCoefficients {
        a0_tilde_plus: compute_tilde_a0(kernel, lambda_plus),
        b0_tilde_plus: compute_tilde_b0(kernel, b0_plus),
    }
}

/// `x_bar(z) = x_tilde(z) + int_0^1 P_I(z, zeta) x_tilde(zeta) dzeta`; rows
/// of the input are components, columns are grid nodes.
pub fn apply_fredholm(kernel: &FredholmKernel, x_tilde: &DMatrix<f64>) -> DMatrix<f64> {
    let grid = kernel.grid();
    assert_eq!(
        x_tilde.ncols(),
        grid.n_nodes(),
        "state not on the kernel grid"
    );
    let w = grid.trapezoid_weights();
    let np = kernel.n_plus();
    let mut out = x_tilde.clone();
    for k in 0..grid.n_nodes() {
        for i in 1..np {
            let mut acc = 0.0;
            for r in 0..i {
                for (l, wl) in w.iter().enumerate() {
                    acc += wl * kernel.p.get(k, l, i, r) * x_tilde[(r, l)];
                }
            }
            out[(i, k)] += acc;
        }
    }
    out
}

/// Inverse of [`apply_fredholm`] by forward substitution over components.
pub fn invert_fredholm(kernel: &FredholmKernel, x_bar: &DMatrix<f64>) -> DMatrix<f64> {
    let grid = kernel.grid();
    assert_eq!(
        x_bar.ncols(),
        grid.n_nodes(),
        "state not on the kernel grid"
    );
    let w = grid.trapezoid_weights();
    let np = kernel.n_plus();
    let mut out = x_bar.clone();
    for i in 1..np {
        for k in 0..grid.n_nodes() {
            let mut acc = 0.0;
            for r in 0..i {
                for (l, wl) in w.iter().enumerate() {
                    acc += wl * kernel.p.get(k, l, i, r) * out[(r, l)];
                }
            }
            out[(i, k)] = x_bar[(i, k)] - acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn two_speed(grid: Grid1D) -> (MatrixField1D, MatrixField1D) {
        let lam = MatrixField1D::constant(
            grid,
            &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])),
        );
        let mut a0 = MatrixField1D::zeros(grid, 2, 2);
        for k in 0..grid.n_nodes() {
            a0.set(k, 1, 0, 1.0);
        }
        (a0, lam)
    }

    #[test]
    fn zero_coupling_and_single_component_give_zero_kernel() {
        let grid = Grid1D::new(10).unwrap();
        let (_, lam) = two_speed(grid);
        let pk = solve_pi(&MatrixField1D::zeros(grid, 2, 2), &lam, grid);
        assert_eq!(pk.p.max_abs(), 0.0);
        let lam1 = MatrixField1D::constant(grid, &DMatrix::identity(1, 1));
        let pk = solve_pi(&MatrixField1D::zeros(grid, 1, 1), &lam1, grid);
        assert_eq!(pk.p.max_abs(), 0.0);
    }

    #[test]
    fn two_speed_kernel_is_piecewise_constant() {
        let grid = Grid1D::new(20).unwrap();
        let (a0, lam) = two_speed(grid);
        let pk = solve_pi(&a0, &lam, grid);
        for k in 0..=20 {
            for l in 0..=20 {
                let (z, zeta) = (grid.z(k), grid.z(l));
                let expected = if z - 0.5 * zeta >= -1e-12 { 0.5 } else { 0.0 };
                assert_eq!(pk.p.get(k, l, 1, 0), expected, "node ({k}, {l})");
                assert_eq!(pk.p.get(k, l, 0, 1), 0.0);
                assert_eq!(pk.p.get(k, l, 0, 0), 0.0);
            }
        }
    }

    #[test]
    fn tilde_a0_is_kernel_trace_times_velocity() {
        let grid = Grid1D::new(20).unwrap();
        let (a0, lam) = two_speed(grid);
        let pk = solve_pi(&a0, &lam, grid);
        let at = compute_tilde_a0(&pk, &lam);
        for k in 0..=20 {
            assert_abs_diff_eq!(
                at.get(k, 1, 0),
                pk.p.get(k, 20, 1, 0) * 2.0,
                epsilon = 1e-15
            );
            assert_eq!(at.get(k, 0, 0), 0.0);
            assert_eq!(at.get(k, 0, 1), 0.0);
            assert_eq!(at.get(k, 1, 1), 0.0);
        }
    }

    #[test]
    fn transformation_round_trip() {
        let grid = Grid1D::new(30).unwrap();
        let (a0, lam) = two_speed(grid);
        let pk = solve_pi(&a0, &lam, grid);
        let x = DMatrix::from_fn(2, 31, |i, k| ((i + 1) as f64 * grid.z(k)).sin());
        let bar = apply_fredholm(&pk, &x);
        assert_eq!(bar.row(0), x.row(0));
        let back = invert_fredholm(&pk, &bar);
        assert!((back - x).amax() < 1e-14);
    }

    #[test]
    fn jump_cells_flags_steps_not_slopes() {
        let h = 0.01;
        let smooth: Vec<f64> = (0..=100).map(|k| (3.0 * k as f64 * h).sin()).collect();
        assert!(jump_cells(&smooth, h).is_empty());
        let step: Vec<f64> = (0..=100)
            .map(|k| if k > 42 { 1.0 } else { 0.2 * k as f64 * h })
            .collect();
        assert_eq!(jump_cells(&step, h), vec![42]);
        let kink: Vec<f64> = (0..=100)
            .map(|k| (k as f64 * h - 0.5).abs() * 8.0)
            .collect();
        assert!(jump_cells(&kink, h).is_empty());
        let steep: Vec<f64> = (0..=40)
            .map(|k| {
                let z = k as f64 / 40.0;
                (2.0 * z).exp() - if k > 23 { 0.5 } else { 0.0 }
            })
            .collect();
        assert_eq!(jump_cells(&steep, 1.0 / 40.0), vec![23]);
    }
}
