//! Fredholm kernel that removes a lower triangular boundary coupling among
//! the actuated states, for two speeds and a constant coupling.

use hyperbolic_sff::fredholm::{apply_fredholm, invert_fredholm, sff_coefficients, solve_pi};
use hyperbolic_sff::model::{Grid1D, MatrixField1D};
use hyperbolic_sff::sim::smooth_random_profile;
use hyperbolic_sff::verify::kernel_residual_fredholm;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let grid = Grid1D::new(80).unwrap();
    let lam = MatrixField1D::constant(
        grid,
        &DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 1.0])),
    );
    let a0 = MatrixField1D::constant(grid, &DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]));
    let pk = solve_pi(&a0, &lam, grid);
    for (k, l) in [(20, 20), (20, 60), (60, 40)] {
        println!(
            "P(z = {}, zeta = {})[1, 0] = {}",
            grid.z(k),
            grid.z(l),
            pk.p.get(k, l, 1, 0)
        );
    }
    println!("{}", kernel_residual_fredholm(&pk, &a0, &lam).summary());

    let b0 = MatrixField1D::constant(grid, &DMatrix::from_row_slice(2, 1, &[1.0, 0.5]));
    let sff = sff_coefficients(&pk, &lam, &b0);
    println!(
        "remaining trace coupling is strictly lower: {} (max {:.3})",
        sff.a0_tilde_plus.is_strictly_lower(),
        sff.a0_tilde_plus.max_abs()
    );

    let x = smooth_random_profile(&grid, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let back = invert_fredholm(&pk, &apply_fredholm(&pk, &x));
    println!("round-trip error {:.2e}", (back - x).amax());
}
