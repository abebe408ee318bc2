//! Boundary algebra of the `z = 0` coupling and controllability tests.
//!
//! For a full-row-rank `Q` (n+ x n-) the right inverse `Q^R = Q^T (Q Q^T)^{-1}`
//! and an orthonormal right annihilator `Q^perp` form the invertible matrix
//! `T = [Q^R | Q^perp]`. Splitting `T^{-1} x^-(0)` into its first `n+` and
//! remaining `n- - n+` entries separates the part of `x^-(0)` that actuates
//! `x^+(0)` from the part that does not.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular value threshold used by every rank decision.
pub const RANK_TOL: f64 = 1e-10;

/// Numerical rank: singular values above `RANK_TOL * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    rank_from_singular_values(m.clone().singular_values().as_slice())
}

fn complex_rank(m: &DMatrix<Complex<f64>>) -> usize {
    if m.is_empty() {
        return 0;
    }
    rank_from_singular_values(m.clone().singular_values().as_slice())
}

fn rank_from_singular_values(sv: &[f64]) -> usize {
    let max = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

/// True iff `Q` has `n_plus` rows and numerical rank `n_plus`.
pub fn exact_controllability_check(q: &DMatrix<f64>, n_plus: usize) -> bool {
    q.nrows() == n_plus && numerical_rank(q) == n_plus
}

/// `Q^R = Q^T (Q Q^T)^{-1}`.
pub fn right_inverse(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rank = numerical_rank(q);
    let singular = |rank| Error::SingularGram {
        rank,
        expected: q.nrows(),
    };
    if rank < q.nrows() {
        return Err(singular(rank));
    }
    let gram = q * q.transpose();
    let inv = gram.cholesky().ok_or_else(|| singular(rank))?.inverse();
    Ok(q.transpose() * inv)
}

/// Orthonormal basis of the null space of `Q`, one column per dimension.
///
/// The basis is obtained by orthonormalising the columns of the projector
/// `I - Q^+ Q` in order, with the first non-negligible entry of each column
/// made positive, so the result is deterministic for a given `Q`.
pub fn annihilator(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.ncols();
    let nullity = n - numerical_rank(q).min(n);
    if nullity == 0 {
        return DMatrix::zeros(n, 0);
    }
    let pinv = q
        .clone()
        .pseudo_inverse(RANK_TOL * q.amax().max(f64::MIN_POSITIVE))
        .expect("non-negative tolerance");
    let proj = DMatrix::identity(n, n) - pinv * q;

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(nullity);
    for col in proj.column_iter() {
        if basis.len() == nullity {
            break;
        }
        let mut v = col.clone_owned();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= norm;
            if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12) {
                if first < 0.0 {
                    v.neg_mut();
                }
            }
            basis.push(v);
        }
    }
    DMatrix::from_columns(&basis)
}

/// Everything derived from `Q` that the transformations need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryAlgebra {
    pub q: DMatrix<f64>,
    pub q_right: DMatrix<f64>,
    pub q_perp: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub t_inv: DMatrix<f64>,
    pub q_perp_left: DMatrix<f64>,
}

impl BoundaryAlgebra {
    pub fn n_plus(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_minus(&self) -> usize {
        self.q.ncols()
    }

    pub fn delta_n(&self) -> usize {
        self.q_perp.ncols()
    }

    /// Last `delta_n` rows of `T^{-1}`: the map `x^-(0) -> x~_2^-(0)`.
    pub fn second_partition_rows(&self) -> DMatrix<f64> {
        self.t_inv.rows(self.n_plus(), self.delta_n()).clone_owned()
    }
}

/// Builds `Q^R`, `Q^perp`, `T`, `T^{-1}` and the left inverse of `Q^perp`.
pub fn build_boundary_algebra(q: &DMatrix<f64>) -> Result<BoundaryAlgebra> {
    let q_right = right_inverse(q)?;
    let q_perp = annihilator(q);
    let n = q.ncols();
    let mut t = DMatrix::zeros(n, n);
    t.columns_mut(0, q_right.ncols()).copy_from(&q_right);
    t.columns_mut(q_right.ncols(), q_perp.ncols())
        .copy_from(&q_perp);
    let t_inv = t.clone().try_inverse().ok_or(Error::SingularGram {
        rank: numerical_rank(&t),
        expected: n,
    })?;
    let q_perp_left = if q_perp.ncols() == 0 {
        DMatrix::zeros(0, n)
    } else {
        let gram = q_perp.transpose() * &q_perp;
        gram.try_inverse()
            .map(|g| g * q_perp.transpose())
            .ok_or(Error::SingularGram {
                rank: numerical_rank(&q_perp),
                expected: q_perp.ncols(),
            })?
    };
    Ok(BoundaryAlgebra {
        q: q.clone(),
        q_right,
        q_perp,
        t,
        t_inv,
        q_perp_left,
    })
}

/// Splits `T^{-1} x^-(0)` into the parts of length `n+` and `delta_n`.
pub fn partition_boundary(
    algebra: &BoundaryAlgebra,
    x_minus_0: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let y = &algebra.t_inv * x_minus_0;
    let np = algebra.n_plus();
    (
        y.rows(0, np).clone_owned(),
        y.rows(np, algebra.delta_n()).clone_owned(),
    )
}

/// Inverse of [`partition_boundary`]: `T [x1; x2]`.
pub fn reassemble_boundary(
    algebra: &BoundaryAlgebra,
    x1: &DVector<f64>,
    x2: &DVector<f64>,
) -> DVector<f64> {
    &algebra.q_right * x1 + &algebra.q_perp * x2
}

/// Kalman rank test on `[B, FB, ..., F^{n-1} B]` with unit-norm columns.
pub fn kalman_check(f: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = f.nrows();
    assert_eq!(f.ncols(), n, "F must be square");
    assert_eq!(b.nrows(), n, "B must have as many rows as F");
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for p in 0..n {
        ctrb.columns_mut(p * m, m).copy_from(&block);
        block = f * block;
    }
    for mut col in ctrb.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    numerical_rank(&ctrb) == n
}

/// Hautus test: `rank [F - lambda I, B] = n` for every eigenvalue of `F`.
pub fn hautus_check(f: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = f.nrows();
    assert_eq!(f.ncols(), n, "F must be square");
    assert_eq!(b.nrows(), n, "B must have as many rows as F");
    let eigenvalues = f.complex_eigenvalues();
    let fc = f.map(|v| Complex::new(v, 0.0));
    let bc = b.map(|v| Complex::new(v, 0.0));
    eigenvalues.iter().all(|&lambda| {
        let mut pencil = DMatrix::zeros(n, n + b.ncols());
        pencil
            .columns_mut(0, n)
            .copy_from(&(&fc - DMatrix::identity(n, n) * lambda));
        pencil.columns_mut(n, b.ncols()).copy_from(&bc);
        complex_rank(&pencil) == n
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    #[test]
    fn exact_controllability_examples() {
        assert!(exact_controllability_check(&DMatrix::identity(2, 2), 2));
        assert!(exact_controllability_check(&row(&[1.0, 1.0]), 1));
        assert!(!exact_controllability_check(
            &DMatrix::from_element(2, 2, 1.0),
            2
        ));
        assert!(!exact_controllability_check(&DMatrix::zeros(1, 2), 1));
    }

    #[test]
    fn right_inverse_examples() {
        assert_eq!(right_inverse(&row(&[2.0])).unwrap(), row(&[0.5]));
        assert_eq!(
            right_inverse(&DMatrix::identity(2, 2)).unwrap(),
            DMatrix::identity(2, 2)
        );
        let qr = right_inverse(&row(&[1.0, 1.0])).unwrap();
        assert!((qr - DMatrix::from_column_slice(2, 1, &[0.5, 0.5])).amax() < 1e-15);
    }

    #[test]
    fn right_inverse_rejects_rank_deficiency() {
        let err = right_inverse(&DMatrix::from_element(2, 2, 1.0)).unwrap_err();
        assert!(matches!(
            err,
            Error::SingularGram {
                rank: 1,
                expected: 2
            }
        ));
    }

    #[test]
    fn annihilator_examples() {
        assert_eq!(annihilator(&DMatrix::identity(2, 2)).ncols(), 0);
        let qp = annihilator(&row(&[1.0, 1.0]));
        let s = 1.0 / 2f64.sqrt();
        assert!((qp - DMatrix::from_column_slice(2, 1, &[s, -s])).amax() < 1e-15);
    }

    #[test]
    fn boundary_algebra_identity() {
        let alg = build_boundary_algebra(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(alg.t, DMatrix::identity(2, 2));
        assert_eq!(alg.t_inv, DMatrix::identity(2, 2));
        assert_eq!(alg.delta_n(), 0);
    }

    #[test]
    fn boundary_algebra_row_of_ones() {
        let alg = build_boundary_algebra(&row(&[1.0, 1.0])).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, s, 0.5, -s]);
        assert!((&alg.t - expected).amax() < 1e-15);
        assert!(alg.t.determinant().abs() > 0.1);
        assert!((&alg.t * &alg.t_inv - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn boundary_algebra_canonical_projection() {
        let alg = build_boundary_algebra(&row(&[1.0, 0.0])).unwrap();
        assert_eq!(alg.q_right, DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        assert_eq!(alg.q_perp, DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
        assert_eq!(alg.t, DMatrix::identity(2, 2));
    }

    #[test]
    fn partition_examples() {
        let alg = build_boundary_algebra(&DMatrix::identity(2, 2)).unwrap();
        let (x1, x2) = partition_boundary(&alg, &DVector::from_vec(vec![3.0, 4.0]));
        assert_eq!(x1.as_slice(), &[3.0, 4.0]);
        assert_eq!(x2.len(), 0);

        let alg = build_boundary_algebra(&row(&[1.0, 1.0])).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let (x1, x2) = partition_boundary(&alg, &x);
        assert!((x1[0] - 2.0).abs() < 1e-12);
        assert!(x2[0].abs() < 1e-12);
        assert!(((&alg.q * &x)[0] - x1[0]).abs() < 1e-12);

        let (x1, x2) = partition_boundary(&alg, &DVector::zeros(2));
        assert_eq!(x1.amax() + x2.amax(), 0.0);
    }

    #[test]
    fn kalman_examples() {
        let f = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(kalman_check(&f, &b));
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(!kalman_check(&f, &b));
        assert!(kalman_check(&DMatrix::zeros(1, 1), &row(&[1.0])));
    }

    #[test]
    fn hautus_examples() {
        let f = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(hautus_check(&f, &b));
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(!hautus_check(&f, &b));
        // complex pair, controllable through either state
        let f = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(hautus_check(
            &f,
            &DMatrix::from_column_slice(2, 1, &[1.0, 0.0])
        ));
    }
}
