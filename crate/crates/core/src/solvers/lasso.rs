//! Cyclic coordinate descent for `min_b ||X b - y||^2 + lambda ||b||_1`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct LassoProblem<'a> {
    pub design: &'a DMatrix<f64>,
    pub target: &'a DVector<f64>,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoSolution {
    pub coef: DVector<f64>,
    pub converged: bool,
    /// Coordinate sweeps performed (full and active-set sweeps both count).
    pub sweeps: usize,
    /// Largest subgradient-condition violation at the returned iterate.
    pub kkt_violation: f64,
}

impl<'a> LassoProblem<'a> {
    pub fn new(design: &'a DMatrix<f64>, target: &'a DVector<f64>, lambda: f64) -> Result<Self> {
        if design.nrows() != target.len() {
            return Err(Error::dim("lasso target", design.nrows(), target.len()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lasso lambda must be >= 0, got {lambda}")));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lasso design"));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lasso target"));
        }
        Ok(LassoProblem { design, target, lambda })
    }

    pub fn objective(&self, coef: &DVector<f64>) -> f64 {
        (self.design * coef - self.target).norm_squared() + self.lambda * coef.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Gradient of the smooth part, `2 X^T (X b - y)`.
    pub fn smooth_gradient(&self, coef: &DVector<f64>) -> DVector<f64> {
        self.design.tr_mul(&(self.design * coef - self.target)) * 2.0
    }

    /// Maximum violation of the lasso optimality conditions at `coef`.
    pub fn kkt_violation(&self, coef: &DVector<f64>) -> f64 {
        let grad = self.smooth_gradient(coef);
        violation_from_gradient(&grad, coef, self.lambda)
    }
}

fn violation_from_gradient(grad: &DVector<f64>, coef: &DVector<f64>, lambda: f64) -> f64 {
    grad.iter()
        .zip(coef.iter())
        .map(|(&g, &b)| {
            if b == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g + b.signum() * lambda).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[inline]
fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Solves from the zero vector.
pub fn lasso_solve(problem: &LassoProblem<'_>, tol: f64, max_iters: usize) -> Result<LassoSolution> {
    let zero = DVector::zeros(problem.design.ncols());
    lasso_solve_from(problem, &zero, tol, max_iters)
}

/// Coordinate descent started at `init`.
///
/// Each round does one full cyclic sweep, checks the subgradient
/// conditions, then solves exactly on the support found so far (see
/// [`support_step`]). Hitting `max_iters` sweeps returns the last (and
/// best) iterate with `converged = false`.
pub fn lasso_solve_from(
    problem: &LassoProblem<'_>,
    init: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<LassoSolution> {
    let x = problem.design;
    let n = x.ncols();
    if init.len() != n {
        return Err(Error::dim("lasso init", n, init.len()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig("lasso tol must be positive".into()));
    }
    let half_lambda = problem.lambda / 2.0;
    let col_sq: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
    let mut coef = init.clone();
    for (j, &sq) in col_sq.iter().enumerate() {
        if sq == 0.0 {
            coef[j] = 0.0;
        }
    }
    let mut resid = problem.target - x * &coef;
    let mut sweeps = 0;
    let mut last_pattern: Vec<i8> = coef.iter().map(|v| sign_code(*v)).collect();

    let update = |j: usize, coef: &mut DVector<f64>, resid: &mut DVector<f64>| -> f64 {
        let sq = col_sq[j];
        if sq == 0.0 {
            return 0.0;
        }
        let col = x.column(j);
        let old = coef[j];
        let rho = col.dot(resid) + sq * old;
        let new = soft_threshold(rho, half_lambda) / sq;
        let delta = new - old;
        if delta != 0.0 {
            resid.axpy(-delta, &col, 1.0);
            coef[j] = new;
        }
        delta.abs() * sq.sqrt()
    };

    loop {
        for j in 0..n {
            update(j, &mut coef, &mut resid);
        }
        sweeps += 1;

        // grad = -2 X^T r
        let grad = x.tr_mul(&resid) * -2.0;
        let violation = violation_from_gradient(&grad, &coef, problem.lambda);
        if violation <= tol || sweeps >= max_iters {
            return Ok(LassoSolution {
                coef,
                converged: violation <= tol,
                sweeps,
                kkt_violation: violation,
            });
        }

        // Once a sweep leaves the sign pattern unchanged the support has
        // most likely settled; finish it off exactly.
        let pattern: Vec<i8> = coef.iter().map(|v| sign_code(*v)).collect();
        if pattern == last_pattern {
            support_step(problem, &mut coef, &mut resid);
        }
        last_pattern = pattern;
    }
}

fn sign_code(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Relative pivot cutoff used to decide the numerical rank of the support.
const RANK_TOL: f64 = 1e-10;

/// Basis of the null space of `xs` (columns), from a column-pivoted QR:
/// with `xs P = Q [R11 R12]`, the null space is `P [-R11^{-1} R12; I]`.
fn null_basis(xs: &DMatrix<f64>) -> DMatrix<f64> {
    let k = xs.ncols();
    let qr = xs.clone().col_piv_qr();
    let r = qr.r();
    let lead = r[(0, 0)].abs();
    let rank = (0..r.nrows().min(k))
        .take_while(|&i| r[(i, i)].abs() > RANK_TOL * lead)
        .count();
    let free = k - rank;
    let mut basis = DMatrix::zeros(k, free);
    if free == 0 {
        return basis;
    }
    let r11 = r.view((0, 0), (rank, rank)).into_owned();
    let r12 = r.view((0, rank), (rank, free)).into_owned();
    let Some(top) = r11.solve_upper_triangular(&r12) else {
        return DMatrix::zeros(k, 0);
    };
    basis.view_mut((0, 0), (rank, free)).copy_from(&(-top));
    basis.view_mut((rank, 0), (free, free)).fill_with_identity();
    // undo the column permutation: row i of the pivoted basis belongs to column order[i]
    let mut order = nalgebra::RowDVector::from_iterator(k, (0..k).map(|i| i as f64));
    qr.p().permute_columns(&mut order);
    let mut out = DMatrix::zeros(k, free);
    for (i, &o) in order.iter().enumerate() {
        out.set_row(o as usize, &basis.row(i));
    }
    out
}

/// While the live columns are linearly dependent the fixed-sign quadratic
/// is flat along their null space, so a null direction with `s^T d < 0`
/// decreases the objective linearly. Each such move ends at a sign change,
/// which removes one coordinate and one null direction.
fn prune_dependent(
    xs: &DMatrix<f64>,
    live: &mut Vec<usize>,
    values: &mut Vec<f64>,
) {
    let mut null = null_basis(xs);
    while null.ncols() > 0 {
        let signs = DVector::from_iterator(values.len(), values.iter().map(|v| v.signum()));
        let slopes = null.tr_mul(&signs);
        let (pick, slope) = slopes
            .iter()
            .enumerate()
            .map(|(c, &sl)| (c, sl / null.column(c).norm()))
            .fold((0, 0.0f64), |best, cur| if cur.1.abs() > best.1.abs() { cur } else { best });
        if slope.abs() <= RANK_TOL {
            // s is orthogonal to the null space: the quadratic is bounded
            return;
        }
        let dir = null.column(pick) * -slope.signum();
        let mut step = f64::INFINITY;
        let mut blocking = None;
        for (i, &v) in values.iter().enumerate() {
            if v * dir[i] < 0.0 && -v / dir[i] < step {
                step = -v / dir[i];
                blocking = Some(i);
            }
        }
        let Some(i) = blocking else {
            return;
        };
        for (v, d) in values.iter_mut().zip(dir.iter()) {
            *v += step * d;
        }

        // restrict the null space to vectors vanishing at coordinate i
        let pivot = (0..null.ncols())
            .max_by(|&p, &q| null[(i, p)].abs().total_cmp(&null[(i, q)].abs()))
            .unwrap();
        if null[(i, pivot)] != 0.0 {
            let pc = null.column(pivot).into_owned();
            for c in 0..null.ncols() {
                if c != pivot {
                    let f = null[(i, c)] / pc[i];
                    null.column_mut(c).axpy(-f, &pc, 1.0);
                }
            }
            null = null.remove_column(pivot);
        }
        null = null.remove_row(i);
        live.remove(i);
        values.remove(i);
    }
}

/// Exact minimization on the current support with the signs held fixed.
///
/// On a fixed-sign orthant the objective is the smooth quadratic
/// `||X_S b - y||^2 + lambda s^T b`, which decreases monotonically along the
/// segment towards its minimizer. The segment is cut at the first sign
/// change, that coordinate is dropped, and the reduced problem is solved
/// again until a full step fits. Dependent support columns are pruned
/// first (see [`prune_dependent`]). This turns the slow tail of coordinate
/// descent on correlated columns into a handful of linear solves.
fn support_step(problem: &LassoProblem<'_>, coef: &mut DVector<f64>, resid: &mut DVector<f64>) {
    let x = problem.design;
    let mut live: Vec<usize> = (0..coef.len()).filter(|&j| coef[j] != 0.0).collect();
    if live.is_empty() {
        return;
    }
    let mut values: Vec<f64> = live.iter().map(|&j| coef[j]).collect();
    if live.len() > x.nrows() {
        prune_dependent(&x.select_columns(&live), &mut live, &mut values);
    }

    let xs = x.select_columns(&live);
    let gram = xs.tr_mul(&xs);
    let corr = xs.tr_mul(problem.target);
    // positions into `gram` of the coordinates still in play
    let mut pos: Vec<usize> = (0..live.len()).collect();

    while !pos.is_empty() && pos.len() <= x.nrows() {
        let b = DVector::from_iterator(pos.len(), pos.iter().map(|&p| values[p]));
        let rhs = DVector::from_iterator(pos.len(), pos.iter().map(|&p| corr[p]))
            - b.map(f64::signum) * (problem.lambda / 2.0);
        let Some(chol) = Cholesky::new(gram.select_rows(&pos).select_columns(&pos)) else {
            break;
        };
        let dir = chol.solve(&rhs) - &b;
        if dir.iter().any(|v| !v.is_finite()) {
            break;
        }

        let mut step = 1.0f64;
        let mut blocking = None;
        for i in 0..pos.len() {
            if b[i] * dir[i] < 0.0 && -b[i] / dir[i] < step {
                step = -b[i] / dir[i];
                blocking = Some(i);
            }
        }
        for (i, &p) in pos.iter().enumerate() {
            values[p] = b[i] + step * dir[i];
        }
        match blocking {
            Some(i) => {
                values[pos[i]] = 0.0;
                pos.remove(i);
            }
            None => break,
        }
    }

    let mut next = DVector::zeros(coef.len());
    for (&j, &v) in live.iter().zip(&values) {
        next[j] = v;
    }
    // an ill-conditioned support system can lose the descent property to rounding
    if problem.objective(&next) <= problem.objective(coef) {
        *resid = problem.target - x * &next;
        *coef = next;
    }
}
