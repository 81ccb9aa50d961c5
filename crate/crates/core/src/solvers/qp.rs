//! Two-block QP over a product of capped simplices:
//!
//! ```text
//! min  [a; b]^T H [a; b]   s.t.  a in C_a,  b in C_b
//! ```
//!
//! Block-coordinate projected gradient. Each block step projects
//! `x - grad / L` onto its simplex, with `L` a Gershgorin bound on the
//! block's Hessian, then takes the exact minimizing step along the segment
//! towards the projected point.

use nalgebra::{DMatrix, DVector, DVectorView, DMatrixView};

use crate::error::{Error, Result};
use crate::solvers::simplex::CappedSimplex;

const SYMMETRY_TOL: f64 = 1e-8;
const INNER_STEPS: usize = 25;

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub a: DVector<f64>,
    pub beta: DVector<f64>,
    pub objective: f64,
    /// Objective at the start and after every outer sweep.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn quadratic_form(h: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let na = a.len();
    let nb = b.len();
    let haa = h.view((0, 0), (na, na));
    let hab = h.view((0, na), (na, nb));
    let hbb = h.view((na, na), (nb, nb));
    a.dot(&(haa * a)) + 2.0 * a.dot(&(hab * b)) + b.dot(&(hbb * b))
}

/// Gershgorin bound on the block after removing its mean entry.
///
/// Adding a constant to every entry of a diagonal block changes the
/// objective by a constant on the simplex (the coordinates sum to one),
/// so the centered block has the same curvature along feasible directions.
fn centered_gershgorin(block: DMatrixView<'_, f64>) -> f64 {
    let n = block.nrows();
    let mean = block.sum() / (n * n) as f64;
    let bound = block
        .row_iter()
        .map(|row| row.iter().map(|v| (v - mean).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if bound > 0.0 {
        bound
    } else {
        1.0
    }
}

struct Block<'a> {
    simplex: &'a CappedSimplex,
    hess: DMatrixView<'a, f64>,
    lipschitz: f64,
}

impl Block<'_> {
    /// A few projected-gradient steps on `x` with the other block's linear
    /// term `cross = H_xy y` held fixed.
    fn descend(&self, x: &mut DVector<f64>, cross: &DVector<f64>, tol: f64, scale: f64) -> Result<()> {
        // H x is carried along and updated with the H d product that the
        // line search needs anyway
        let mut hx = self.hess * &*x;
        for _ in 0..INNER_STEPS {
            let grad = (&hx + cross) * 2.0;
            let target = &*x - &grad / self.lipschitz;
            let dir = self.simplex.project(&target)? - &*x;
            let dir_sq = dir.norm_squared();
            if dir_sq == 0.0 {
                break;
            }
            let slope = grad.dot(&dir);
            if slope >= 0.0 {
                break;
            }
            let hd = self.hess * &dir;
            let curvature = dir.dot(&hd);
            if curvature < -1e-10 * scale * dir_sq {
                return Err(Error::NegativeCurvature(curvature / dir_sq));
            }
            let step = if curvature > 0.0 {
                (-slope / (2.0 * curvature)).min(1.0)
            } else {
                1.0
            };
            x.axpy(step, &dir, 1.0);
            hx.axpy(step, &hd, 1.0);
            let gain = -(step * slope + step * step * curvature);
            if gain <= tol * 1e-3 {
                break;
            }
        }
        Ok(())
    }
}

fn max_asymmetry(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    worst
}

pub fn qp_capped_simplex_blocks(
    h: &DMatrix<f64>,
    ca: &CappedSimplex,
    cb: &CappedSimplex,
    tol: f64,
    max_iters: usize,
) -> Result<QpSolution> {
    let na = ca.dim();
    let nb = cb.dim();
    if h.nrows() != na + nb || h.ncols() != na + nb {
        return Err(Error::dim("QP matrix", na + nb, h.nrows().max(h.ncols())));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("QP matrix"));
    }
    let scale = h.amax().max(1.0);
    let asym = max_asymmetry(h);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Asymmetric(asym));
    }

    let hab = h.view((0, na), (na, nb));
    let hba = h.view((na, 0), (nb, na));
    let block_a = Block {
        simplex: ca,
        hess: h.view((0, 0), (na, na)),
        lipschitz: 2.0 * centered_gershgorin(h.view((0, 0), (na, na))),
    };
    let block_b = Block {
        simplex: cb,
        hess: h.view((na, na), (nb, nb)),
        lipschitz: 2.0 * centered_gershgorin(h.view((na, na), (nb, nb))),
    };

    let mut a = ca.center();
    let mut b = cb.center();
    let mut objective = quadratic_form(h, &a, &b);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        block_a.descend(&mut a, &mul(hab, b.as_view()), tol, scale)?;
        block_b.descend(&mut b, &mul(hba, a.as_view()), tol, scale)?;
        let next = quadratic_form(h, &a, &b);
        trace.push(next);
        let decrease = objective - next;
        objective = next;
        if decrease < tol {
            converged = true;
            break;
        }
    }

    Ok(QpSolution {
        a,
        beta: b,
        objective,
        trace,
        iterations,
        converged,
    })
}

fn mul(m: DMatrixView<'_, f64>, v: DVectorView<'_, f64>) -> DVector<f64> {
    m * v
}
