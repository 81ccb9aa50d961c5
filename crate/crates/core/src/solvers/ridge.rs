//! Closed-form solution of the l2-regularized hull problem
//!
//! ```text
//! min ||Y a - D beta||^2 + lambda1 ||a||^2 + lambda2 ||beta||^2   s.t. sum(a) = 1
//! ```
//!
//! With `z = [a; beta]`, `A = [Y, -D]`, `B = blockdiag(lambda1 I, lambda2 I)` and
//! `d = [1; 0]`, stationarity gives `z = z0 / (d^T z0)` where `(A^T A + B) z0 = d`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RidgeSolution {
    pub a: DVector<f64>,
    pub beta: DVector<f64>,
    /// Lagrange multiplier of the sum constraint in `A^T A z + B z + m d = 0`.
    pub multiplier: f64,
}

/// `A^T A + B` for `A = [Y, -D]`.
pub fn normal_matrix(y: &DMatrix<f64>, d: &DMatrix<f64>, lambda1: f64, lambda2: f64) -> DMatrix<f64> {
    let na = y.ncols();
    let nb = d.ncols();
    let mut m = DMatrix::zeros(na + nb, na + nb);
    let yty = y.tr_mul(y);
    let ytd = y.tr_mul(d);
    let dtd = d.tr_mul(d);
    m.view_mut((0, 0), (na, na)).copy_from(&yty);
    m.view_mut((0, na), (na, nb)).copy_from(&(-&ytd));
    m.view_mut((na, 0), (nb, na)).copy_from(&(-ytd.transpose()));
    m.view_mut((na, na), (nb, nb)).copy_from(&dtd);
    for i in 0..na {
        m[(i, i)] += lambda1;
    }
    for i in na..na + nb {
        m[(i, i)] += lambda2;
    }
    m
}

pub fn constrained_ridge_solve(
    y: &DMatrix<f64>,
    d: &DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Result<RidgeSolution> {
    if y.nrows() != d.nrows() {
        return Err(Error::dim("dictionary rows", y.nrows(), d.nrows()));
    }
    if y.ncols() == 0 {
        return Err(Error::Empty("query set".into()));
    }
    if !(lambda1 > 0.0 && lambda2 > 0.0) {
        return Err(Error::InvalidConfig(
            "closed-form ridge requires lambda1 > 0 and lambda2 > 0".into(),
        ));
    }
    let na = y.ncols();
    let nb = d.ncols();
    let m = normal_matrix(y, d, lambda1, lambda2);
    let chol = Cholesky::new(m).ok_or(Error::Factorization)?;
    let mut rhs = DVector::zeros(na + nb);
    rhs.rows_mut(0, na).fill(1.0);
    let z0 = chol.solve(&rhs);
    let scale = z0.rows(0, na).sum();
    if !(scale.abs() >= 1e-12) {
        return Err(Error::Degenerate(format!(
            "d^T z0 = {scale:e}; cannot normalize the query coefficients"
        )));
    }
    let z = z0 / scale;
    Ok(RidgeSolution {
        a: z.rows(0, na).into_owned(),
        beta: z.rows(na, nb).into_owned(),
        multiplier: -1.0 / scale,
    })
}
