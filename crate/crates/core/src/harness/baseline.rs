//! Per-image SRC/CRC baselines with the average-residual rule: every frame
//! of the query set is coded on its own over the whole dictionary (lasso
//! for SRC, ridge for CRC), the per-class residuals are averaged over the
//! frames, and the smallest average wins.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    classify, residual_per_class, ClassResidual, ClassificationResult, CompressedGalleryCollection,
    FeatureMatrix, HullSolution, ImageSet, Residuals, SolverConfig,
};
use crate::solvers::{lasso_solve, LassoProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Lasso coding with penalty `lambda2`.
    Src,
    /// Ridge coding with penalty `lambda2`.
    Crc,
}

fn code_frame(
    kind: Baseline,
    y: &DVector<f64>,
    gallery: &CompressedGalleryCollection,
    ridge: Option<&Cholesky<f64, nalgebra::Dyn>>,
    cfg: &SolverConfig,
) -> Result<(DVector<f64>, bool)> {
    let d = gallery.dictionary();
    match kind {
        Baseline::Src => {
            let problem = LassoProblem::new(d, y, cfg.lambda2)?;
            let s = lasso_solve(&problem, cfg.lasso_tol, cfg.lasso_max_iters)?;
            Ok((s.coef, s.converged))
        }
        Baseline::Crc => {
            let chol = ridge.expect("ridge factor prepared for CRC");
            Ok((chol.solve(&d.tr_mul(y)), true))
        }
    }
}

/// Average of the per-frame class residuals, plus the mean code and
/// whether every frame's coding converged.
pub fn baseline_residuals(
    query: &ImageSet,
    gallery: &CompressedGalleryCollection,
    cfg: &SolverConfig,
    kind: Baseline,
) -> Result<(Residuals, DVector<f64>, bool)> {
    if query.dim() != gallery.dimension() {
        return Err(Error::dim("query feature dimension", gallery.dimension(), query.dim()));
    }
    let d = gallery.dictionary();
    let ridge = match kind {
        Baseline::Crc => {
            if !(cfg.lambda2 > 0.0) {
                return Err(Error::InvalidConfig("CRC needs lambda2 > 0".into()));
            }
            let normal = d.tr_mul(d) + DMatrix::identity(d.ncols(), d.ncols()) * cfg.lambda2;
            Some(Cholesky::new(normal).ok_or(Error::Factorization)?)
        }
        Baseline::Src => None,
    };
    let one = DVector::from_element(1, 1.0);
    let mut sums = vec![0.0; gallery.num_classes()];
    let mut mean_code = DVector::zeros(gallery.total_atoms());
    let mut all_converged = true;
    for frame in query.features.matrix().column_iter() {
        let y = frame.into_owned();
        let (code, converged) = code_frame(kind, &y, gallery, ridge.as_ref(), cfg)?;
        all_converged &= converged;
        let single = FeatureMatrix::new(DMatrix::from_column_slice(y.len(), 1, y.as_slice()))?;
        let r = residual_per_class(&single, &one, gallery, &code)?;
        for (acc, v) in sums.iter_mut().zip(r.values()) {
            *acc += v;
        }
        mean_code += code;
    }
    let n = query.len() as f64;
    mean_code /= n;
    let residuals = Residuals(
        gallery
            .labels()
            .zip(sums)
            .map(|(label, s)| ClassResidual {
                label: label.to_string(),
                residual: s / n,
            })
            .collect(),
    );
    Ok((residuals, mean_code, all_converged))
}

/// Classifies with the average-residual rule. The returned solution holds
/// the uniform frame weights and the mean per-frame code.
pub fn classify_baseline(
    query: &ImageSet,
    gallery: &CompressedGalleryCollection,
    cfg: &SolverConfig,
    kind: Baseline,
) -> Result<ClassificationResult> {
    cfg.validate()?;
    let start = Instant::now();
    let (residuals, beta, converged) = baseline_residuals(query, gallery, cfg, kind)?;
    let predicted = classify(&residuals)?;
    let n = query.len();
    Ok(ClassificationResult {
        predicted,
        residuals: residuals.clone(),
        solution: HullSolution {
            a: DVector::from_element(n, 1.0 / n as f64),
            beta,
            residuals,
            objective_trace: Vec::new(),
            iterations: n,
            converged,
        },
        elapsed: start.elapsed(),
    })
}
