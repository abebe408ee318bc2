use hyperbolic_sff::fredholm::*;
use hyperbolic_sff::model::{Grid1D, MatrixField1D};
use hyperbolic_sff::verify::kernel_residual_fredholm;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn velocities(grid: Grid1D, v: &[f64]) -> MatrixField1D {
    MatrixField1D::constant(
        grid,
        &DMatrix::from_diagonal(&DVector::from_column_slice(v)),
    )
}

/// Smooth strictly lower triangular `A0+` with `n+ = 3`.
fn smooth_a0(grid: Grid1D, seed: u64) -> MatrixField1D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.5..3.0)))
        .collect();
    MatrixField1D::from_fn(grid, 3, 3, |z| {
        let mut m = DMatrix::zeros(3, 3);
        m[(1, 0)] = c[0].0 * (c[0].1 * z).cos();
        m[(2, 0)] = c[1].0 * (1.0 + c[1].1 * z * z);
        m[(2, 1)] = c[2].0 * (c[2].1 * z).sin();
        m
    })
}

fn random_state(grid: Grid1D, rows: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    hyperbolic_sff::sim::smooth_random_profile(&grid, rows, 1.0, &mut rng)
}

#[test]
fn two_speed_example_is_half_beyond_the_origin_characteristic() {
    let grid = Grid1D::new(80).unwrap();
    let lam = velocities(grid, &[2.0, 1.0]);
    let a0 = MatrixField1D::from_fn(grid, 2, 2, |_| {
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0])
    });
    let pk = solve_pi(&a0, &lam, grid);
    for k in 0..=80 {
        for l in 0..=80 {
            let inflow_from_bottom = grid.z(k) >= 0.5 * grid.z(l) - 1e-12;
            let expected = if inflow_from_bottom { 0.5 } else { 0.0 };
            assert_eq!(pk.p.get(k, l, 1, 0), expected);
        }
    }
    let rep = kernel_residual_fredholm(&pk, &a0, &lam);
    assert!(rep.passed, "{}", rep.summary());
    assert!(rep.measurement("interior_residual").unwrap() <= 5.0 * grid.h());
}

#[test]
fn smooth_data_residual_converges() {
    let run = |n: usize| {
        let grid = Grid1D::new(n).unwrap();
        let lam = MatrixField1D::from_fn(grid, 3, 3, |z| {
            DMatrix::from_diagonal(&DVector::from_column_slice(&[3.0 + z, 2.0, 1.0 - 0.3 * z]))
        });
        let a0 = smooth_a0(grid, 4);
        let pk = solve_pi(&a0, &lam, grid);
        let rep = kernel_residual_fredholm(&pk, &a0, &lam);
        assert!(rep.passed, "{}", rep.summary());
        rep.measurement("interior_residual").unwrap()
    };
    let (a, b) = (run(50), run(100));
    assert!(a / b >= 1.6, "{a:e} -> {b:e}");
}

#[test]
fn coefficients_satisfy_their_integral_equations() {
    let grid = Grid1D::new(100).unwrap();
    let lam = velocities(grid, &[2.5, 1.7, 0.6]);
    let a0 = smooth_a0(grid, 8);
    let pk = solve_pi(&a0, &lam, grid);
    let b0 = MatrixField1D::from_fn(grid, 3, 2, |z| {
        DMatrix::from_row_slice(3, 2, &[z, 1.0, -z * z, 0.5, 2.0 * z, z.cos()])
    });
    let sff = sff_coefficients(&pk, &lam, &b0);
    let w = grid.trapezoid_weights();
    let lam1 = lam.at(100);
    let mut worst = 0.0_f64;
    for k in 0..=100 {
        let mut int_a = DMatrix::zeros(3, 3);
        let mut int_b = DMatrix::zeros(3, 2);
        for (l, wl) in w.iter().enumerate() {
            int_a += pk.p.at(k, l) * sff.a0_tilde_plus.at(l) * *wl;
            int_b += pk.p.at(k, l) * sff.b0_tilde_plus.at(l) * *wl;
        }
        let ra = sff.a0_tilde_plus.at(k) + int_a - pk.p.at(k, 100) * &lam1;
        let rb = sff.b0_tilde_plus.at(k) + int_b - b0.at(k);
        worst = worst.max(ra.amax()).max(rb.amax());
    }
    assert!(worst <= 1e-10, "residual {worst:e}");
    assert!(sff.a0_tilde_plus.is_strictly_lower());
    assert!(pk.p.at(37, 61).upper_triangle().amax() == 0.0);
}

#[test]
fn single_component_gives_zero_coefficients() {
    let grid = Grid1D::new(20).unwrap();
    let lam = velocities(grid, &[1.0]);
    let pk = solve_pi(&MatrixField1D::zeros(grid, 1, 1), &lam, grid);
    let sff = sff_coefficients(&pk, &lam, &MatrixField1D::zeros(grid, 1, 0));
    assert!(sff.a0_tilde_plus.is_zero());
    assert_eq!(pk.p.max_abs(), 0.0);
}

#[test]
fn fredholm_round_trip_three_components() {
    let grid = Grid1D::new(100).unwrap();
    let lam = velocities(grid, &[2.5, 1.7, 0.6]);
    for seed in 0..20 {
        let pk = solve_pi(&smooth_a0(grid, seed), &lam, grid);
        let x = random_state(grid, 3, 100 + seed);
        let back = invert_fredholm(&pk, &apply_fredholm(&pk, &x));
        assert!((back - &x).amax() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn apply_fredholm_is_linear(seed in 0u64..1000, alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let grid = Grid1D::new(40).unwrap();
        let lam = velocities(grid, &[2.5, 1.7, 0.6]);
        let pk = solve_pi(&smooth_a0(grid, seed), &lam, grid);
        let x = random_state(grid, 3, seed);
        let y = random_state(grid, 3, seed + 7);
        let lhs = apply_fredholm(&pk, &(&x * alpha + &y * beta));
        let rhs = apply_fredholm(&pk, &x) * alpha + apply_fredholm(&pk, &y) * beta;
        prop_assert!((lhs - rhs).amax() <= 1e-12);
    }
}
