mod common;

use common::*;
use hyperbolic_sff::model::{Grid1D, HyperbolicSystem, StateSnapshot};
use hyperbolic_sff::sim::*;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn smooth_state(grid: Grid1D, nm: usize, np: usize, seed: u64) -> StateSnapshot {
    hyperbolic_sff::verify::consistency_initial_state(&grid, nm, np, seed)
}

fn coupled_2x2(grid: Grid1D) -> HyperbolicSystem {
    HyperbolicSystem::constant(
        grid,
        &[1.3],
        &[0.7],
        m1(0.0),
        m1(0.8),
        m1(-0.6),
        m1(0.0),
        m1(1.1),
        m1(0.4),
    )
    .unwrap()
}

/// Explicit upwind steps of the scalar-block system, written out by hand.
fn hand_rolled(
    grid: Grid1D,
    (lm, lp, amp, apm, q, r): (f64, f64, f64, f64, f64, f64),
    x0: &StateSnapshot,
    input: impl Fn(f64) -> f64,
    steps: usize,
    dt: f64,
) -> (Vec<f64>, Vec<f64>) {
    let (n, h) = (grid.n_cells(), grid.h());
    let mut xm: Vec<f64> = x0.x_minus.row(0).iter().copied().collect();
    let mut xp: Vec<f64> = x0.x_plus.row(0).iter().copied().collect();
    for s in 1..=steps {
        let mut ym = xm.clone();
        let mut yp = xp.clone();
        for k in 0..n {
            ym[k] = xm[k] + dt * (lm * (xm[k + 1] - xm[k]) / h + amp * xp[k]);
        }
        for k in 1..=n {
            yp[k] = xp[k] + dt * (-lp * (xp[k] - xp[k - 1]) / h + apm * xm[k]);
        }
        yp[0] = q * ym[0];
        ym[n] = r * yp[n] + input(s as f64 * dt);
        xm = ym;
        xp = yp;
    }
    (xm, xp)
}

#[test]
fn matches_hand_rolled_integrator() {
    let grid = Grid1D::new(60).unwrap();
    let sys = coupled_2x2(grid);
    let spec = as_spec(&sys);
    let cfg = SimConfig {
        t_end: 0.8,
        ..Default::default()
    };
    let x0 = smooth_state(grid, 1, 1, 4);
    let input = |t: f64| (3.0 * t).sin();
    let traj = simulate_from(&spec, &cfg, &x0, &|t| DVector::from_element(1, input(t))).unwrap();
    let (xm, xp) = hand_rolled(
        grid,
        (1.3, 0.7, 0.8, -0.6, 1.1, 0.4),
        &x0,
        input,
        traj.len() - 1,
        traj.dt,
    );
    let last = traj.final_state();
    for k in 0..=60 {
        assert!((last.x_minus[(0, k)] - xm[k]).abs() <= 1e-12);
        assert!((last.x_plus[(0, k)] - xp[k]).abs() <= 1e-12);
    }
}

#[test]
fn matches_hand_rolled_cascade() {
    let grid = Grid1D::new(40).unwrap();
    let (f, b, c, q) = (0.5, 1.0, 0.3, 1.0);
    let sys = scalar_pdeode(grid, 1.0, 0.8, q, f, b, c);
    let spec = as_pdeode_spec(&sys);
    let cfg = SimConfig {
        t_end: 0.6,
        ..Default::default()
    };
    let mut x0 = smooth_state(grid, 1, 1, 2);
    x0.xi = Some(DVector::from_element(1, 0.5));
    let traj = simulate_from(&spec, &cfg, &x0, &|_| DVector::zeros(1)).unwrap();

    let (n, h, dt) = (40, grid.h(), traj.dt);
    let mut xm: Vec<f64> = x0.x_minus.row(0).iter().copied().collect();
    let mut xp: Vec<f64> = x0.x_plus.row(0).iter().copied().collect();
    let mut xi = 0.5;
    for _ in 1..traj.len() {
        let mut ym = xm.clone();
        let mut yp = xp.clone();
        for k in 0..n {
            ym[k] = xm[k] + dt * (xm[k + 1] - xm[k]) / h;
        }
        for k in 1..=n {
            yp[k] = xp[k] - dt * 0.8 * (xp[k] - xp[k - 1]) / h;
        }
        xi += dt * (f * xi + b * xm[0]);
        yp[0] = q * ym[0] + c * xi;
        ym[n] = 0.0;
        xm = ym;
        xp = yp;
    }
    let last = traj.final_state();
    assert!((last.xi.as_ref().unwrap()[0] - xi).abs() <= 1e-12);
    for k in 0..=n {
        assert!((last.x_minus[(0, k)] - xm[k]).abs() <= 1e-12);
        assert!((last.x_plus[(0, k)] - xp[k]).abs() <= 1e-12);
    }
}

#[test]
fn unit_cfl_pure_transport_shifts_exactly() {
    let grid = Grid1D::new(64).unwrap();
    let spec = as_spec(&scalar_system(grid, 1.0, 1.0, 0.0, 0.0, 0.0));
    let cfg = SimConfig {
        t_end: 0.25,
        cfl: 1.0,
        initial: InitialData {
            x_minus: Profile::Sine {
                amplitudes: vec![1.0],
                frequency: 1.0,
            },
            ..Default::default()
        },
        ..Default::default()
    };
    let traj = simulate(&spec, &cfg, 0).unwrap();
    for s in &traj.snapshots {
        for k in 0..=64 {
            let z = grid.z(k);
            if z + s.t <= 1.0 {
                let exact = (std::f64::consts::PI * (z + s.t)).sin();
                assert!((s.x_minus[(0, k)] - exact).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn zero_is_an_equilibrium_of_every_form() {
    let grid = Grid1D::new(30).unwrap();
    let sys = random_pdeode(&mut ChaCha8Rng::seed_from_u64(1), grid, 2, 2, 1);
    for spec in [as_spec(&sys.base), as_pdeode_spec(&sys)] {
        let traj = simulate(&spec, &SimConfig::default(), 0).unwrap();
        assert!(traj.snapshots.iter().all(|s| s.sup_norm() == 0.0));
    }
}

#[test]
fn superposition_holds() {
    let grid = Grid1D::new(50).unwrap();
    let spec = as_spec(&coupled_2x2(grid));
    let cfg = SimConfig::default();
    let (x, y) = (smooth_state(grid, 1, 1, 1), smooth_state(grid, 1, 1, 2));
    let (a, b) = (0.7, -1.9);
    let ux = |t: f64| DVector::from_element(1, t.sin());
    let uy = |t: f64| DVector::from_element(1, 1.0 - t);
    let combo = StateSnapshot {
        t: 0.0,
        x_minus: &x.x_minus * a + &y.x_minus * b,
        x_plus: &x.x_plus * a + &y.x_plus * b,
        xi: None,
    };
    let tx = simulate_from(&spec, &cfg, &x, &ux).unwrap();
    let ty = simulate_from(&spec, &cfg, &y, &uy).unwrap();
    let tc = simulate_from(&spec, &cfg, &combo, &|t| ux(t) * a + uy(t) * b).unwrap();
    for ((sx, sy), sc) in tx.snapshots.iter().zip(&ty.snapshots).zip(&tc.snapshots) {
        let d = (&sx.x_minus * a + &sy.x_minus * b - &sc.x_minus)
            .amax()
            .max((&sx.x_plus * a + &sy.x_plus * b - &sc.x_plus).amax());
        assert!(d <= 1e-10);
    }
}

/// Final-time deviation on the nodes of `n` from the run on `n_ref`.
fn deviation(n: usize, n_ref: usize) -> f64 {
    let run = |n: usize| {
        let grid = Grid1D::new(n).unwrap();
        let x0 = smooth_state(grid, 1, 1, 5);
        simulate_from(
            &as_spec(&coupled_2x2(grid)),
            &SimConfig::default(),
            &x0,
            &|_| DVector::zeros(1),
        )
        .unwrap()
        .final_state()
        .clone()
    };
    let (c, r) = (run(n), run(n_ref));
    let step = n_ref / n;
    let mut d = 0.0_f64;
    for k in 0..=n {
        d = d.max((c.x_minus[(0, k)] - r.x_minus[(0, k * step)]).abs());
        d = d.max((c.x_plus[(0, k)] - r.x_plus[(0, k * step)]).abs());
    }
    d
}

#[test]
fn upwind_scheme_is_first_order() {
    let ratio = deviation(50, 400) / deviation(100, 800);
    assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
}

#[test]
fn translation_keeps_the_matrices() {
    let grid = Grid1D::new(10).unwrap();
    let sys = coupled_2x2(grid);
    let spec = as_spec(&sys);
    assert_eq!(spec.bc0.q, sys.q);
    assert_eq!(spec.bc1.r, sys.r);
    assert_eq!(spec.minus.local.len(), 1);
    assert_eq!(spec.minus.local[0].gain, sys.a_mp);
    let quiet = as_spec(&sys.without_coupling());
    assert!(quiet.minus.is_empty() && quiet.plus.is_empty());
    let sys = scalar_pdeode(grid, 1.0, 1.0, 1.0, 0.3, 0.0, 0.0);
    let spec = as_pdeode_spec(&sys);
    assert_eq!(
        spec.ode.as_ref().unwrap().f,
        DMatrix::from_element(1, 1, 0.3)
    );
}
