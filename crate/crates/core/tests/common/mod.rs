#![allow(dead_code)]

use hyperbolic_sff::model::{tri_index, Grid1D, HyperbolicSystem, PdeOdeSystem, TriKernelField};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn m1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Scalar-block system with constant coefficients.
pub fn scalar_system(
    grid: Grid1D,
    lm: f64,
    lp: f64,
    a_mp: f64,
    a_pm: f64,
    q: f64,
) -> HyperbolicSystem {
    HyperbolicSystem::constant(
        grid,
        &[lm],
        &[lp],
        m1(0.0),
        m1(a_mp),
        m1(a_pm),
        m1(0.0),
        m1(q),
        m1(0.0),
    )
    .unwrap()
}

/// Two actuated states, one unactuated, `Q = [1 0]`.
pub fn asymmetric_system(grid: Grid1D) -> HyperbolicSystem {
    HyperbolicSystem::constant(
        grid,
        &[2.0, 1.0],
        &[1.5],
        DMatrix::zeros(2, 2),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
        DMatrix::from_row_slice(1, 2, &[0.5, 0.3]),
        m1(0.0),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::zeros(2, 1),
    )
    .unwrap()
}

/// The 3-state system used for the dual-implementation check of the plus
/// kernels.
pub fn three_state_system(grid: Grid1D) -> HyperbolicSystem {
    HyperbolicSystem::constant(
        grid,
        &[2.0, 1.0],
        &[1.5],
        DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.2, 0.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
        DMatrix::from_row_slice(1, 2, &[0.5, 0.3]),
        m1(0.0),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
        DMatrix::zeros(2, 1),
    )
    .unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Strictly decreasing positive velocities with gaps of at least 0.2.
pub fn ordered_velocities(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = Vec::with_capacity(n);
    let mut cur = uniform(rng, 0.5, 1.0);
    for _ in 0..n {
        v.push(cur);
        cur += uniform(rng, 0.2, 0.8);
    }
    v.reverse();
    v
}

/// Random `r x c` matrix of full row rank.
pub fn full_row_rank(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    loop {
        let q = random_matrix(rng, r, c, 1.0);
        let sv = q.clone().singular_values();
        if sv.iter().all(|s| *s > 0.2) {
            return q;
        }
    }
}

fn zero_diagonal(mut m: DMatrix<f64>) -> DMatrix<f64> {
    m.fill_diagonal(0.0);
    m
}

/// Random valid constant-coefficient system.
pub fn random_system(rng: &mut ChaCha8Rng, grid: Grid1D, nm: usize, np: usize) -> HyperbolicSystem {
    let lm = ordered_velocities(rng, nm);
    let lp = ordered_velocities(rng, np);
    HyperbolicSystem::constant(
        grid,
        &lm,
        &lp,
        zero_diagonal(random_matrix(rng, nm, nm, 0.5)),
        random_matrix(rng, nm, np, 1.0),
        random_matrix(rng, np, nm, 1.0),
        zero_diagonal(random_matrix(rng, np, np, 0.5)),
        full_row_rank(rng, np, nm),
        DMatrix::zeros(nm, np),
    )
    .unwrap()
}

/// Controllable pair `(F, B)` by rejection sampling on the Kalman matrix.
pub fn controllable_pair(
    rng: &mut ChaCha8Rng,
    n0: usize,
    m: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    loop {
        let f = random_matrix(rng, n0, n0, 1.0);
        let b = random_matrix(rng, n0, m, 1.0);
        let mut ctrb = DMatrix::zeros(n0, n0 * m);
        let mut blk = b.clone();
        for p in 0..n0 {
            ctrb.columns_mut(p * m, m).copy_from(&blk);
            blk = &f * blk;
        }
        let sv = ctrb.singular_values();
        if sv.min() > 1e-3 * sv.max() {
            return (f, b);
        }
    }
}

pub fn random_pdeode(
    rng: &mut ChaCha8Rng,
    grid: Grid1D,
    n0: usize,
    nm: usize,
    np: usize,
) -> PdeOdeSystem {
    let lm = ordered_velocities(rng, nm);
    let lp = ordered_velocities(rng, np);
    let base = HyperbolicSystem::constant(
        grid,
        &lm,
        &lp,
        DMatrix::zeros(nm, nm),
        DMatrix::zeros(nm, np),
        DMatrix::zeros(np, nm),
        DMatrix::zeros(np, np),
        full_row_rank(rng, np, nm),
        DMatrix::zeros(nm, np),
    )
    .unwrap();
    let (f, b) = controllable_pair(rng, n0, nm);
    let c = random_matrix(rng, np, n0, 1.0);
    PdeOdeSystem::new(base, f, b, c).unwrap()
}

/// Scalar PDE-ODE cascade with constant coefficients.
pub fn scalar_pdeode(
    grid: Grid1D,
    lm: f64,
    lp: f64,
    q: f64,
    f: f64,
    b: f64,
    c: f64,
) -> PdeOdeSystem {
    let base = HyperbolicSystem::constant(
        grid,
        &[lm],
        &[lp],
        m1(0.0),
        m1(0.0),
        m1(0.0),
        m1(0.0),
        m1(q),
        m1(0.0),
    )
    .unwrap();
    PdeOdeSystem::new(base, m1(f), m1(b), m1(c)).unwrap()
}

/// Value on the line `zeta = zeta_m` at `z`, interpolated linearly between
/// the triangle nodes of that line.
fn on_line(values: &[f64], grid: &Grid1D, m: usize, z: f64) -> f64 {
    let (p, t) = grid.locate(z);
    let p = p.max(m);
    let a = values[tri_index(p, m)];
    if t > 0.0 && p < grid.n_cells() {
        a * (1.0 - t) + values[tri_index(p + 1, m)] * t
    } else {
        a
    }
}

fn on_diagonal(values: &[f64], grid: &Grid1D, d: f64) -> f64 {
    let (p, t) = grid.locate(d);
    let a = values[tri_index(p, p)];
    if t > 0.0 {
        a * (1.0 - t) + values[tri_index(p + 1, p + 1)] * t
    } else {
        a
    }
}

/// Direct discretization of the plus kernel equations in their original
/// variables, for constant coefficients and a single `x^+` component.
///
/// `G = K_pp lambda^+` is transported along `z - zeta = const` from the
/// `zeta = 0` balance, and `H_j = K_pm,j lambda^-_j` along
/// `dz/dzeta = -lambda^+ / lambda^-_j` from the diagonal. Both integrals use
/// the trapezoid rule over the crossings with the grid lines. Returns
/// `(K_pm, K_pp)`.
pub fn direct_plus_kernels(sys: &HyperbolicSystem, tol: f64) -> (TriKernelField, TriKernelField) {
    let grid = sys.grid();
    let (n, h) = (grid.n_cells(), grid.h());
    let nm = sys.n_minus;
    assert_eq!(sys.n_plus, 1, "single x^+ component only");
    let lp = sys.lambda_plus.get(0, 0, 0);
    let lm: Vec<f64> = (0..nm).map(|j| sys.lambda_minus.get(0, j, j)).collect();
    let a_mp: Vec<f64> = (0..nm).map(|r| sys.a_mp.get(0, r, 0)).collect();
    let a_pm: Vec<f64> = (0..nm).map(|j| sys.a_pm.get(0, 0, j)).collect();
    let a_mm = sys.a_mm.at(0);
    // right inverse of the 1 x n- row Q
    let q: Vec<f64> = (0..nm).map(|j| sys.q[(0, j)]).collect();
    let qq: f64 = q.iter().map(|v| v * v).sum();
    let q_r: Vec<f64> = q.iter().map(|v| v / qq).collect();

    let len = (n + 1) * (n + 2) / 2;
    let mut kpp = vec![0.0; len];
    let mut kpm = vec![vec![0.0; len]; nm];
    let diag_h: Vec<f64> = (0..nm).map(|j| a_pm[j] / (lm[j] + lp) * lm[j]).collect();

    for _ in 0..1000 {
        // sources of the two equations at every node
        let s_pp: Vec<f64> = (0..len)
            .map(|e| (0..nm).map(|r| kpm[r][e] * a_mp[r]).sum())
            .collect();
        let s_pm: Vec<Vec<f64>> = (0..nm)
            .map(|j| {
                (0..len)
                    .map(|e| {
                        kpp[e] * a_pm[j] + (0..nm).map(|r| kpm[r][e] * a_mm[(r, j)]).sum::<f64>()
                    })
                    .collect()
            })
            .collect();

        let mut new_pp = vec![0.0; len];
        let mut new_pm = vec![vec![0.0; len]; nm];
        for k in 0..=n {
            for l in 0..=k {
                let e = tri_index(k, l);
                // K_pp: back to zeta = 0 along the diagonal direction
                let z0 = grid.z(k) - grid.z(l);
                let foot: f64 = (0..nm)
                    .map(|r| on_line(&kpm[r], &grid, 0, z0) * lm[r] * q_r[r])
                    .sum();
                let mut integral = 0.0;
                for m in 0..l {
                    let za = z0 + grid.z(m + 1);
                    let zb = z0 + grid.z(m);
                    integral +=
                        0.5 * h * (on_line(&s_pp, &grid, m + 1, za) + on_line(&s_pp, &grid, m, zb));
                }
                new_pp[e] = (foot - integral) / lp;

                // K_pm: forward to the diagonal
                for j in 0..nm {
                    if k == l {
                        new_pm[j][e] = diag_h[j] / lm[j];
                        continue;
                    }
                    let slope = -lp / lm[j];
                    let src = &s_pm[j];
                    let mut integral = 0.0;
                    let mut m = l;
                    let mut za = grid.z(k);
                    loop {
                        let (zeta_a, zeta_b) = (grid.z(m), grid.z(m + 1));
                        let zb = za + h * slope;
                        let (da, db) = (za - zeta_a, zb - zeta_b);
                        let sa = on_line(src, &grid, m, za);
                        if db < 1e-12 {
                            let theta = if da - db > 0.0 {
                                (da / (da - db)).clamp(0.0, 1.0)
                            } else {
                                1.0
                            };
                            let d = zeta_a + theta * h;
                            integral += 0.5 * theta * h * (sa + on_diagonal(src, &grid, d));
                            break;
                        }
                        integral += 0.5 * h * (sa + on_line(src, &grid, m + 1, zb));
                        m += 1;
                        za = zb;
                    }
                    new_pm[j][e] = (diag_h[j] - integral) / lm[j];
                }
            }
        }
        let mut update: f64 = new_pp
            .iter()
            .zip(&kpp)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        for j in 0..nm {
            update = update.max(
                new_pm[j]
                    .iter()
                    .zip(&kpm[j])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
        }
        kpp = new_pp;
        kpm = new_pm;
        if update < tol {
            break;
        }
    }

    let mut k_pm = TriKernelField::zeros(grid, 1, nm);
    let mut k_pp = TriKernelField::zeros(grid, 1, 1);
    for (j, v) in kpm.iter().enumerate() {
        k_pm.set_entry(0, j, v);
    }
    k_pp.set_entry(0, 0, &kpp);
    (k_pm, k_pp)
}
