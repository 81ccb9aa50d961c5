//! Regularized-hull engine.
//!
//! Solves
//!
//! ```text
//! min_{a, beta} ||Y a - D beta||^2 + lambda1 ||a||_p + lambda2 ||beta||_p   s.t. sum(a) = 1
//! ```
//!
//! for `p = 2` in closed form and for `p = 1` by alternating lasso updates
//! of `a` and `beta` on the augmented Lagrangian, with a scalar multiplier
//! on the sum constraint.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    classify, residual_per_class, ClassificationResult, CompressedGalleryCollection, HullSolution,
    ImageSet, SolverConfig,
};
use crate::solvers::{constrained_ridge_solve, lasso_solve_from, LassoProblem};

/// Violation of `sum(a) = 1` accepted as converged for the l1 path.
pub const L1_CONSTRAINT_TOL: f64 = 1e-3;
/// Below this violation the l1 hull coefficients are used as is.
const RENORMALIZE_ABOVE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

/// Iterate of the alternating l1 solver.
#[derive(Clone, Debug, PartialEq)]
pub struct L1State {
    pub a: DVector<f64>,
    pub beta: DVector<f64>,
    pub multiplier: f64,
    pub iteration: usize,
    pub augmented_objective: f64,
}

fn check_shapes(y: &ImageSet, gallery: &CompressedGalleryCollection) -> Result<()> {
    if y.dim() != gallery.dimension() {
        return Err(Error::dim("query feature dimension", gallery.dimension(), y.dim()));
    }
    Ok(())
}

/// `||Y a - D beta||^2 + lambda1 ||a||_1 + lambda2 ||beta||_1`.
pub fn l1_objective(
    y: &DMatrix<f64>,
    d: &DMatrix<f64>,
    a: &DVector<f64>,
    beta: &DVector<f64>,
    cfg: &SolverConfig,
) -> f64 {
    (y * a - d * beta).norm_squared() + cfg.lambda1 * l1(a) + cfg.lambda2 * l1(beta)
}

/// `||Y a - D beta||^2 + lambda1 ||a||^2 + lambda2 ||beta||^2`.
pub fn l2_objective(
    y: &DMatrix<f64>,
    d: &DMatrix<f64>,
    a: &DVector<f64>,
    beta: &DVector<f64>,
    cfg: &SolverConfig,
) -> f64 {
    (y * a - d * beta).norm_squared() + cfg.lambda1 * a.norm_squared() + cfg.lambda2 * beta.norm_squared()
}

fn l1(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn solve_l2(
    y: &ImageSet,
    gallery: &CompressedGalleryCollection,
    cfg: &SolverConfig,
) -> Result<HullSolution> {
    check_shapes(y, gallery)?;
    let ym = y.features.matrix();
    let d = gallery.dictionary();
    let sol = constrained_ridge_solve(ym, d, cfg.lambda1, cfg.lambda2)?;
    let residuals = residual_per_class(&y.features, &sol.a, gallery, &sol.beta)?;
    let objective = l2_objective(ym, d, &sol.a, &sol.beta, cfg);
    Ok(HullSolution {
        a: sol.a,
        beta: sol.beta,
        residuals,
        objective_trace: vec![objective],
        iterations: 1,
        converged: true,
    })
}

impl L1State {
    pub fn initial(y: &ImageSet, gallery: &CompressedGalleryCollection, cfg: &SolverConfig) -> Self {
        let n_a = y.len();
        L1State {
            a: DVector::zeros(n_a),
            beta: DVector::zeros(gallery.total_atoms()),
            multiplier: cfg.multiplier_for(n_a),
            iteration: 0,
            augmented_objective: 0.0,
        }
    }

    /// Objective plus `m (sum a - 1) + gamma/2 (sum a - 1)^2`.
    pub fn augmented(
        &self,
        y: &DMatrix<f64>,
        d: &DMatrix<f64>,
        cfg: &SolverConfig,
    ) -> f64 {
        let gamma = cfg.gamma_for(self.a.len());
        let gap = self.a.sum() - 1.0;
        l1_objective(y, d, &self.a, &self.beta, cfg) + self.multiplier * gap + 0.5 * gamma * gap * gap
    }
}

/// Minimizes the augmented Lagrangian over `a` with `beta` and the
/// multiplier fixed, as a lasso on the design `[Y; sqrt(gamma/2) e]`
/// against `[D beta; sqrt(gamma/2) (1 - m / gamma)]`.
pub fn l1_update_a(
    state: &L1State,
    y: &ImageSet,
    gallery: &CompressedGalleryCollection,
    cfg: &SolverConfig,
) -> Result<DVector<f64>> {
    check_shapes(y, gallery)?;
    let ym = y.features.matrix();
    let (dim, n_a) = ym.shape();
    if state.a.len() != n_a {
        return Err(Error::dim("state.a", n_a, state.a.len()));
    }
    if state.beta.len() != gallery.total_atoms() {
        return Err(Error::dim("state.beta", gallery.total_atoms(), state.beta.len()));
    }
    let gamma = cfg.gamma_for(n_a);
    let root = (gamma / 2.0).sqrt();

    let mut design = DMatrix::zeros(dim + 1, n_a);
    design.rows_mut(0, dim).copy_from(ym);
    design.row_mut(dim).fill(root);
    let mut target = DVector::zeros(dim + 1);
    target.rows_mut(0, dim).copy_from(&(gallery.dictionary() * &state.beta));
    target[dim] = root * (1.0 - state.multiplier / gamma);

    let problem = LassoProblem::new(&design, &target, cfg.lambda1)?;
    Ok(lasso_solve_from(&problem, &state.a, cfg.lasso_tol, cfg.lasso_max_iters)?.coef)
}

/// Lasso of `Y a_next` over the dictionary with penalty `lambda2`.
pub fn l1_update_beta(
    a_next: &DVector<f64>,
    y: &ImageSet,
    gallery: &CompressedGalleryCollection,
    cfg: &SolverConfig,
) -> Result<DVector<f64>> {
    let zero = DVector::zeros(gallery.total_atoms());
    l1_update_beta_from(a_next, &zero, y, gallery, cfg)
}

/// [`l1_update_beta`] warm started at `init`.
pub fn l1_update_beta_from(
    a_next: &DVector<f64>,
    init: &DVector<f64>,
    y: &ImageSet,
    gallery: &CompressedGalleryCollection,
    cfg: &SolverConfig,
) -> Result<DVector<f64>> {
    check_shapes(y, gallery)?;
    if a_next.len() != y.len() {
        return Err(Error::dim("a", y.len(), a_next.len()));
    }
    let target = y.features.matrix() * a_next;
    let problem = LassoProblem::new(gallery.dictionary(), &target, cfg.lambda2)?;
    Ok(lasso_solve_from(&problem, init, cfg.lasso_tol, cfg.lasso_max_iters)?.coef)
}

/// `m + gamma (sum(a_next) - 1)`.
pub fn l1_update_multiplier(state: &L1State, a_next: &DVector<f64>, cfg: &SolverConfig) -> f64 {
    state.multiplier + cfg.gamma_for(a_next.len()) * (a_next.sum() - 1.0)
}

pub fn solve_l1(
    y: &ImageSet,
    gallery: &CompressedGalleryCollection,
    cfg: &SolverConfig,
) -> Result<HullSolution> {
    check_shapes(y, gallery)?;
    let ym = y.features.matrix();
    let d = gallery.dictionary();

    // A single sample is its own hull: a = [1] and only beta is coded.
    if y.len() == 1 {
        let a = DVector::from_element(1, 1.0);
        let beta = l1_update_beta(&a, y, gallery, cfg)?;
        let residuals = residual_per_class(&y.features, &a, gallery, &beta)?;
        let objective = l1_objective(ym, d, &a, &beta, cfg);
        return Ok(HullSolution {
            a,
            beta,
            residuals,
            objective_trace: vec![objective],
            iterations: 1,
            converged: true,
        });
    }

    let mut state = L1State::initial(y, gallery, cfg);
    let mut trace = Vec::with_capacity(cfg.max_outer_iters);
    while state.iteration < cfg.max_outer_iters {
        let a_next = l1_update_a(&state, y, gallery, cfg)?;
        let beta_next = l1_update_beta_from(&a_next, &state.beta, y, gallery, cfg)?;
        state.multiplier = l1_update_multiplier(&state, &a_next, cfg);
        state.a = a_next;
        state.beta = beta_next;
        state.iteration += 1;
        state.augmented_objective = state.augmented(ym, d, cfg);

        let objective = l1_objective(ym, d, &state.a, &state.beta, cfg);
        if !objective.is_finite() {
            return Err(Error::NonFinite("l1 objective"));
        }
        let settled = trace
            .last()
            .is_some_and(|prev: &f64| (prev - objective).abs() < cfg.lasso_tol);
        trace.push(objective);
        if settled && (state.a.sum() - 1.0).abs() < L1_CONSTRAINT_TOL {
            break;
        }
    }

    let total = state.a.sum();
    if !(total.abs() >= 1e-12) {
        return Err(Error::Degenerate(format!(
            "query coefficients sum to {total:e}; hull point undefined"
        )));
    }
    let violation = (total - 1.0).abs();
    let mut a = state.a;
    if violation > RENORMALIZE_ABOVE {
        a /= total;
    }
    let residuals = residual_per_class(&y.features, &a, gallery, &state.beta)?;
    Ok(HullSolution {
        a,
        beta: state.beta,
        residuals,
        objective_trace: trace,
        iterations: state.iteration,
        converged: violation <= L1_CONSTRAINT_TOL,
    })
}

pub fn solve_rh(
    y: &ImageSet,
    gallery: &CompressedGalleryCollection,
    cfg: &SolverConfig,
    norm: Norm,
) -> Result<HullSolution> {
    match norm {
        Norm::L1 => solve_l1(y, gallery, cfg),
        Norm::L2 => solve_l2(y, gallery, cfg),
    }
}

pub fn classify_rh(
    y: &ImageSet,
    gallery: &CompressedGalleryCollection,
    cfg: &SolverConfig,
    norm: Norm,
) -> Result<ClassificationResult> {
    cfg.validate()?;
    let start = Instant::now();
    let solution = solve_rh(y, gallery, cfg, norm)?;
    let predicted = classify(&solution.residuals)?;
    Ok(ClassificationResult {
        predicted,
        residuals: solution.residuals.clone(),
        solution,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureMatrix, GalleryClass};
    use approx::assert_relative_eq;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn gallery(classes: &[(&str, Vec<Vec<f64>>)]) -> CompressedGalleryCollection {
        CompressedGalleryCollection::new(
            classes
                .iter()
                .map(|(l, cols)| GalleryClass {
                    label: l.to_string(),
                    atoms: FeatureMatrix::from_columns(cols).unwrap(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn query(cols: &[Vec<f64>]) -> ImageSet {
        ImageSet::query(FeatureMatrix::from_columns(cols).unwrap(), None)
    }

    fn three_class() -> CompressedGalleryCollection {
        gallery(&[
            ("a", vec![unit(&[1.0, 0.1, 0.0, 0.2]), unit(&[0.9, 0.3, 0.1, 0.0])]),
            ("b", vec![unit(&[0.0, 1.0, 0.2, 0.1]), unit(&[0.1, 0.8, 0.0, 0.3])]),
            ("c", vec![unit(&[0.1, 0.0, 1.0, 0.4]), unit(&[0.0, 0.2, 0.7, 1.0])]),
        ])
    }

    fn state(a: Vec<f64>, beta: Vec<f64>, multiplier: f64) -> L1State {
        L1State {
            a: DVector::from_vec(a),
            beta: DVector::from_vec(beta),
            multiplier,
            iteration: 0,
            augmented_objective: 0.0,
        }
    }

    #[test]
    fn a_update_scalar_least_squares() {
        let g = three_class();
        let y = query(&[unit(&[0.3, 0.4, 0.5, 0.6])]);
        for gamma in [0.5, 2.0, 10.0] {
            let cfg = SolverConfig {
                lambda1: 0.0,
                gamma: Some(gamma),
                ..Default::default()
            };
            let a = l1_update_a(&state(vec![0.0], vec![0.0; 6], 0.0), &y, &g, &cfg).unwrap();
            let h = gamma / 2.0;
            assert_relative_eq!(a[0], h / (1.0 + h), epsilon = 1e-10);
        }
    }

    #[test]
    fn a_update_large_penalty_forces_constraint() {
        let g = three_class();
        let y = query(&[unit(&[0.3, 0.4, 0.5, 0.6])]);
        let cfg = SolverConfig {
            lambda1: 0.0,
            gamma: Some(1e8),
            ..Default::default()
        };
        let a = l1_update_a(&state(vec![0.0], vec![0.0; 6], 0.0), &y, &g, &cfg).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn a_update_is_idempotent_at_its_optimum() {
        let g = three_class();
        let y = query(&[unit(&[1.0, 0.2, 0.1, 0.0]), unit(&[0.2, 1.0, 0.0, 0.1])]);
        let cfg = SolverConfig::default();
        let s0 = state(vec![0.5, 0.5], vec![0.1, 0.0, 0.2, 0.0, 0.0, 0.05], 0.3);
        let a1 = l1_update_a(&s0, &y, &g, &cfg).unwrap();
        let s1 = L1State { a: a1.clone(), ..s0 };
        let a2 = l1_update_a(&s1, &y, &g, &cfg).unwrap();
        assert!((a1 - a2).amax() < 1e-9);
    }

    #[test]
    fn beta_update_zero_cases() {
        let g = three_class();
        let y = query(&[unit(&[0.3, 0.4, 0.5, 0.6]), unit(&[0.6, 0.5, 0.4, 0.3])]);
        let cfg = SolverConfig::default();
        // Y a = 0
        let beta = l1_update_beta(&DVector::zeros(2), &y, &g, &cfg).unwrap();
        assert_eq!(beta, DVector::zeros(6));
        // penalty above the zero threshold 2 max |d_j^T t|
        let a = DVector::from_vec(vec![0.5, 0.5]);
        let t = y.features.matrix() * &a;
        let threshold = 2.0 * (g.dictionary().tr_mul(&t)).amax();
        let cfg = SolverConfig {
            lambda2: threshold * 1.0001,
            ..Default::default()
        };
        assert_eq!(l1_update_beta(&a, &y, &g, &cfg).unwrap(), DVector::zeros(6));
    }

    #[test]
    fn beta_update_recovers_an_atom() {
        let g = three_class();
        let atom = g.dictionary().column(3).iter().copied().collect::<Vec<_>>();
        let y = query(&[atom]);
        let cfg = SolverConfig {
            lambda2: 1e-6,
            ..Default::default()
        };
        let beta = l1_update_beta(&DVector::from_element(1, 1.0), &y, &g, &cfg).unwrap();
        let mut e = DVector::zeros(6);
        e[3] = 1.0;
        assert!((beta - e).amax() < 1e-3);
    }

    #[test]
    fn multiplier_arithmetic() {
        let cfg = SolverConfig {
            gamma: Some(2.0),
            ..Default::default()
        };
        let s = state(vec![0.0; 2], vec![], 0.0);
        assert_eq!(l1_update_multiplier(&s, &DVector::from_vec(vec![1.0, 0.5]), &cfg), 1.0);
        let s = state(vec![0.0; 2], vec![], 0.7);
        assert_eq!(l1_update_multiplier(&s, &DVector::from_vec(vec![0.25, 0.75]), &cfg), 0.7);
        let mut s = state(vec![0.0; 2], vec![], 0.0);
        let a = DVector::from_vec(vec![0.6, 0.6]);
        for step in 1..=4 {
            s.multiplier = l1_update_multiplier(&s, &a, &cfg);
            assert_relative_eq!(s.multiplier, step as f64 * 2.0 * 0.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn l2_solution_satisfies_stationarity() {
        let g = three_class();
        let y = query(&[
            unit(&[1.0, 0.2, 0.1, 0.0]),
            unit(&[0.2, 1.0, 0.0, 0.1]),
            unit(&[0.5, 0.5, 0.5, 0.1]),
        ]);
        let cfg = SolverConfig::default();
        let s = solve_l2(&y, &g, &cfg).unwrap();
        let ym = y.features.matrix();
        let d = g.dictionary();
        let r = ym * &s.a - d * &s.beta;
        // 2 Y^T r + 2 lambda1 a must be a constant vector (the multiplier)
        let ga = ym.tr_mul(&r) * 2.0 + &s.a * (2.0 * cfg.lambda1);
        assert!(ga.max() - ga.min() < 1e-8);
        let gb = d.tr_mul(&r) * -2.0 + &s.beta * (2.0 * cfg.lambda2);
        assert!(gb.amax() < 1e-8);
        assert!((s.a.sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_image_reduces_to_ridge_and_lasso_coding() {
        let g = three_class();
        let col = unit(&[0.4, 0.7, 0.2, 0.3]);
        let y = query(std::slice::from_ref(&col));
        let cfg = SolverConfig::default();
        let d = g.dictionary();
        let yv = DVector::from_vec(col);

        // ridge residuals, solved independently through LU
        let s2 = solve_l2(&y, &g, &cfg).unwrap();
        assert_relative_eq!(s2.a[0], 1.0, epsilon = 1e-12);
        let normal = d.tr_mul(d) + DMatrix::identity(6, 6) * cfg.lambda2;
        let beta = normal.lu().solve(&d.tr_mul(&yv)).unwrap();
        for (k, class) in g.classes().iter().enumerate() {
            let rng = g.class_range(k);
            let rk = (&yv - class.atoms.matrix() * beta.rows(rng.start, rng.len())).norm_squared();
            assert_relative_eq!(s2.residuals.get(&class.label).unwrap(), rk, epsilon = 1e-9);
        }

        // l1: a = [1] and beta meets the lasso optimality conditions
        let s1 = solve_l1(&y, &g, &cfg).unwrap();
        assert_eq!(s1.a[0], 1.0);
        let grad = d.tr_mul(&(d * &s1.beta - &yv)) * 2.0;
        for j in 0..6 {
            if s1.beta[j] != 0.0 {
                assert!((grad[j] + cfg.lambda2 * s1.beta[j].signum()).abs() < 1e-6);
            } else {
                assert!(grad[j].abs() <= cfg.lambda2 + 1e-6);
            }
        }
    }

    #[test]
    fn l1_satisfies_the_sum_constraint_and_decays() {
        let g = three_class();
        let y = query(&[
            unit(&[1.0, 0.2, 0.1, 0.0]),
            unit(&[0.9, 0.1, 0.2, 0.1]),
            unit(&[1.0, 0.3, 0.0, 0.2]),
        ]);
        let cfg = SolverConfig::default();
        let s = solve_l1(&y, &g, &cfg).unwrap();
        assert!(s.converged);
        assert!((s.a.sum() - 1.0).abs() <= 1e-10);
        for w in s.objective_trace.windows(2).skip(1) {
            assert!(w[1] <= w[0] + 1e-6, "{:?}", s.objective_trace);
        }
        assert_eq!(classify(&s.residuals).unwrap(), "a");
    }

    #[test]
    fn gallery_set_verbatim_is_recognised() {
        let g = three_class();
        let cols: Vec<Vec<f64>> = g.classes()[1].atoms.matrix().column_iter().map(|c| c.iter().copied().collect()).collect();
        let y = query(&cols);
        for norm in [Norm::L1, Norm::L2] {
            let r = classify_rh(&y, &g, &SolverConfig::default(), norm).unwrap();
            assert_eq!(r.predicted, "b", "{norm:?}");
        }
    }

    #[test]
    fn single_atom_gallery_always_wins() {
        let g = gallery(&[("only", vec![unit(&[1.0, 2.0, 3.0])])]);
        let y = query(&[unit(&[3.0, 1.0, 0.0]), unit(&[0.0, 0.0, 1.0])]);
        for norm in [Norm::L1, Norm::L2] {
            assert_eq!(classify_rh(&y, &g, &SolverConfig::default(), norm).unwrap().predicted, "only");
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = three_class();
        let y = query(&[vec![1.0, 0.0, 0.0]]);
        assert!(matches!(solve_l2(&y, &g, &SolverConfig::default()), Err(Error::Dimension { .. })));
    }
}
