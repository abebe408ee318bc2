//! Boundary algebra of an underactuated boundary map and the controllability
//! tests for an ODE pair.

use hyperbolic_sff::ctrl_algebra::{
    build_boundary_algebra, exact_controllability_check, hautus_check, kalman_check,
    partition_boundary,
};
use nalgebra::{DMatrix, DVector};

fn main() -> hyperbolic_sff::Result<()> {
    let q = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, 0.2]);
    println!("Q = {}", fmt(&q));
    println!(
        "exactly controllable (rank Q = n+): {}",
        exact_controllability_check(&q, 2)
    );
    let a = build_boundary_algebra(&q)?;
    println!("right inverse Q^R = {}", fmt(&a.q_right));
    println!("annihilator Q^perp = {}", fmt(&a.q_perp));
    let x = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
    let (actuated, free) = partition_boundary(&a, &x);
    println!(
        "x^-(0) = {} splits into Q x = {} and the free part {}",
        fmtv(&x),
        fmtv(&actuated),
        fmtv(&free)
    );

    let f = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.3]);
    for b in [
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
    ] {
        println!(
            "B = {}: Kalman {}, Hautus {}",
            fmt(&b),
            kalman_check(&f, &b),
            hautus_check(&f, &b)
        );
    }
    let uncontrollable = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
    let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    println!(
        "diagonal F with a single reached mode: Kalman {}",
        kalman_check(&uncontrollable, &b)
    );
    Ok(())
}

fn fmt(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            r.iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    format!("[{}]", rows.join("; "))
}

fn fmtv(v: &DVector<f64>) -> String {
    fmt(&DMatrix::from_row_slice(1, v.len(), v.as_slice()))
}
