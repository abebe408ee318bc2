mod common;

use common::*;
use hyperbolic_sff::artstein::*;
use hyperbolic_sff::ctrl_algebra::build_boundary_algebra;
use hyperbolic_sff::model::{Grid1D, HyperbolicSystem, PdeOdeSystem};
use hyperbolic_sff::pipeline::pdeode_transformation;
use hyperbolic_sff::sim::SimConfig;
use hyperbolic_sff::verify::artstein_consistency;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Max node error of `M = N lambda` against `e^{f z / lambda} b / q`.
fn closed_form_error(n: usize) -> f64 {
    let (f, b, q, lam) = (0.7, 1.3, 2.0, 0.8);
    let sys = scalar_pdeode(Grid1D::new(n).unwrap(), 1.0, lam, q, f, b, 0.0);
    let (_, ker) = pdeode_transformation(&sys).unwrap();
    let grid = ker.n.grid();
    let mut err = 0.0_f64;
    for k in 0..=n {
        let exact = (f * grid.z(k) / lam).exp() * b / q;
        err = err.max((ker.n.get(k, 0, 0) * lam - exact).abs());
    }
    err.max((ker.b_bar[(0, 0)] - (f / lam).exp() * b / q).abs())
}

#[test]
fn scalar_kernel_matches_closed_form() {
    assert!(closed_form_error(100) <= 1e-8);
}

#[test]
fn scalar_kernel_is_fourth_order() {
    let (a, b) = (closed_form_error(10), closed_form_error(20));
    let ratio = a / b;
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn matches_matrix_exponential_for_constant_velocities() {
    let grid = Grid1D::new(100).unwrap();
    let base = HyperbolicSystem::constant(
        grid,
        &[2.0, 1.5, 1.0],
        &[1.2, 0.7],
        DMatrix::zeros(3, 3),
        DMatrix::zeros(3, 2),
        DMatrix::zeros(2, 3),
        DMatrix::zeros(2, 2),
        DMatrix::from_row_slice(2, 3, &[1.0, 0.2, 0.0, 0.3, 1.0, 0.5]),
        DMatrix::zeros(3, 2),
    )
    .unwrap();
    let f = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.3]);
    let b = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.5]);
    let c = DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 0.1, -0.2]);
    let sys = PdeOdeSystem::new(base, f.clone(), b.clone(), c.clone()).unwrap();
    let (algebra, ker) = pdeode_transformation(&sys).unwrap();
    let f_bar = &f - &b * &algebra.q_right * &c;
    assert!((&ker.f_bar - &f_bar).amax() < 1e-14);
    let m0 = &b * &algebra.q_right;
    let lam = [1.2, 0.7];
    let mut err = 0.0_f64;
    for k in 0..=100 {
        for (j, lj) in lam.iter().enumerate() {
            let exact = (&f_bar * (grid.z(k) / lj)).exp() * m0.column(j);
            let got = ker.n.at(k).column(j) * *lj;
            err = err.max((got - exact).amax());
        }
    }
    assert!(err <= 1e-8, "error {err:e}");
    assert!(controllability_preserved(&ker));
}

#[test]
fn artstein_round_trip() {
    let grid = Grid1D::new(100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..20 {
        let sys = random_pdeode(&mut rng, grid, 3, 2, 2);
        let (_, ker) = pdeode_transformation(&sys).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let xp = hyperbolic_sff::sim::smooth_random_profile(&grid, 2, 1.0, &mut r);
        let xi = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0));
        let back = invert_artstein(&ker, &apply_artstein(&ker, &xi, &xp), &xp);
        assert!((back - xi).amax() <= 1e-12);
    }
}

#[test]
fn controllability_is_preserved_on_random_cascades() {
    let grid = Grid1D::new(40).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..100 {
        let n0 = rng.random_range(1..=4);
        let nm = rng.random_range(1..=4);
        let np = rng.random_range(1..=nm);
        let sys = random_pdeode(&mut rng, grid, n0, nm, np);
        let (_, ker) = pdeode_transformation(&sys).unwrap();
        assert!(controllability_preserved(&ker), "case {case}");
    }
}

#[test]
fn uncontrollable_pair_is_rejected() {
    let grid = Grid1D::new(10).unwrap();
    let base = scalar_pdeode(grid, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0).base;
    let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
    let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    let sys = PdeOdeSystem::new(base, f, b, DMatrix::zeros(1, 2)).unwrap();
    assert!(pdeode_transformation(&sys).is_err());
}

#[test]
fn frozen_ode_has_no_residual() {
    let grid = Grid1D::new(50).unwrap();
    let base = scalar_pdeode(grid, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0).base;
    let sys = PdeOdeSystem::new(base, m1(0.0), m1(1.0), m1(0.0)).unwrap();
    let algebra = build_boundary_algebra(&sys.base.q).unwrap();
    let ker = solve_n(&sys, &algebra, grid);
    let rep = artstein_consistency(&sys, &ker, &algebra, &SimConfig::default(), 0).unwrap();
    assert!(rep.passed, "{}", rep.summary());
}

#[test]
fn scalar_cascade_consistency_refines() {
    let run = |n: usize| {
        let sys = scalar_pdeode(Grid1D::new(n).unwrap(), 1.0, 0.8, 1.0, 0.5, 1.0, 0.3);
        let (algebra, ker) = pdeode_transformation(&sys).unwrap();
        let rep = artstein_consistency(&sys, &ker, &algebra, &SimConfig::default(), 3).unwrap();
        assert!(rep.passed, "{}", rep.summary());
        rep.measurement("xi_bar_derivative_residual").unwrap()
    };
    let (a, b) = (run(100), run(200));
    assert!(a / b >= 1.6, "{a:e} -> {b:e}");
}
