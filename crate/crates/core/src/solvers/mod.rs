//! Optimization primitives shared by the engines.

pub mod lasso;
pub mod qp;
pub mod ridge;
pub mod simplex;

pub use lasso::{lasso_solve, lasso_solve_from, LassoProblem, LassoSolution};
pub use qp::{qp_capped_simplex_blocks, quadratic_form, QpSolution};
pub use ridge::{constrained_ridge_solve, RidgeSolution};
pub use simplex::CappedSimplex;
