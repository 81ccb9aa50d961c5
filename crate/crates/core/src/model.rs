//! Domain types shared by both engines, plus the residual and argmin rules.

use std::collections::HashSet;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-norm invariant of normalized columns and atoms.
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// A `d x n` real matrix whose columns are samples (one image per column).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix(DMatrix<f64>);

impl FeatureMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Empty(format!(
                "feature matrix must be at least 1x1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(FeatureMatrix(values))
    }

    /// Builds a matrix from sample vectors, each becoming one column.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != rows) {
            return Err(Error::dim("column length", rows, bad.len()));
        }
        let flat: Vec<f64> = columns.iter().flatten().copied().collect();
        Self::new(DMatrix::from_column_slice(rows, columns.len(), &flat))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Returns a copy with every column scaled to unit Euclidean norm.
    ///
    /// A zero column cannot be normalized and is reported as degenerate.
    pub fn normalized(&self) -> Result<Self> {
        let mut m = self.0.clone();
        for (j, mut col) in m.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm == 0.0 {
                return Err(Error::Degenerate(format!("column {j} has zero norm")));
            }
            col /= norm;
        }
        Ok(FeatureMatrix(m))
    }

    pub fn has_unit_columns(&self, tol: f64) -> bool {
        self.0.column_iter().all(|c| (c.norm() - 1.0).abs() <= tol)
    }

    /// Keeps at most the first `n` columns; sets smaller than `n` are returned whole.
    pub fn first_frames(&self, n: usize) -> Self {
        let keep = n.clamp(1, self.cols());
        FeatureMatrix(self.0.columns(0, keep).into_owned())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        FeatureMatrix(&self.0 * factor)
    }
}

/// One query or gallery image set.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    label: Option<String>,
    pub features: FeatureMatrix,
}

impl ImageSet {
    /// Gallery sets always carry a nonempty label.
    pub fn gallery(label: impl Into<String>, features: FeatureMatrix) -> Result<Self> {
        let label = label.into();
        if label.is_empty() {
            return Err(Error::Empty("gallery set label".into()));
        }
        Ok(ImageSet {
            label: Some(label),
            features,
        })
    }

    /// A query set; the label, when present, is ground truth for evaluation only.
    pub fn query(features: FeatureMatrix, label: Option<String>) -> Self {
        ImageSet { label, features }
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn len(&self) -> usize {
        self.features.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.features.cols() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    pub fn first_frames(&self, n: usize) -> Self {
        ImageSet {
            label: self.label.clone(),
            features: self.features.first_frames(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GalleryClass {
    pub label: String,
    pub atoms: FeatureMatrix,
}

static NEXT_GALLERY_ID: AtomicU64 = AtomicU64::new(1);

/// Per-class unit-norm dictionaries `D_k`, concatenated into `D = [D_1, ..., D_K]`.
#[derive(Clone, Debug)]
pub struct CompressedGalleryCollection {
    classes: Vec<GalleryClass>,
    offsets: Vec<usize>,
    dictionary: DMatrix<f64>,
    id: u64,
}

impl PartialEq for CompressedGalleryCollection {
    fn eq(&self, other: &Self) -> bool {
        self.classes == other.classes
    }
}

impl CompressedGalleryCollection {
    pub fn new(classes: Vec<GalleryClass>) -> Result<Self> {
        let first = classes
            .first()
            .ok_or_else(|| Error::Empty("gallery has no classes".into()))?;
        let dim = first.atoms.rows();
        let mut seen = HashSet::new();
        let mut offsets = Vec::with_capacity(classes.len() + 1);
        offsets.push(0);
        for class in &classes {
            if class.label.is_empty() {
                return Err(Error::Empty("gallery class label".into()));
            }
            if !seen.insert(class.label.as_str()) {
                return Err(Error::DuplicateLabel(class.label.clone()));
            }
            if class.atoms.rows() != dim {
                return Err(Error::dim("gallery atoms", dim, class.atoms.rows()));
            }
            if !class.atoms.has_unit_columns(UNIT_NORM_TOL) {
                return Err(Error::Degenerate(format!(
                    "atoms of class `{}` are not unit norm",
                    class.label
                )));
            }
            offsets.push(offsets.last().unwrap() + class.atoms.cols());
        }
        let total = *offsets.last().unwrap();
        let mut dictionary = DMatrix::zeros(dim, total);
        for (k, class) in classes.iter().enumerate() {
            dictionary
                .columns_mut(offsets[k], class.atoms.cols())
                .copy_from(class.atoms.matrix());
        }
        Ok(CompressedGalleryCollection {
            classes,
            offsets,
            dictionary,
            id: NEXT_GALLERY_ID.fetch_add(1, Ordering::Relaxed),
        })
    }

    /// Uses every (unit-normalized) sample of each gallery set as an atom.
    pub fn uncompressed(sets: &[ImageSet]) -> Result<Self> {
        let classes = sets
            .iter()
            .map(|s| {
                let label = s
                    .label()
                    .ok_or_else(|| Error::Empty("gallery set label".into()))?;
                Ok(GalleryClass {
                    label: label.to_string(),
                    atoms: s.features.normalized()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(classes)
    }

    pub fn classes(&self) -> &[GalleryClass] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.label.as_str())
    }

    pub fn dimension(&self) -> usize {
        self.dictionary.nrows()
    }

    pub fn total_atoms(&self) -> usize {
        self.dictionary.ncols()
    }

    /// Column range of class `k` inside the concatenated dictionary.
    pub fn class_range(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn dictionary(&self) -> &DMatrix<f64> {
        &self.dictionary
    }

    /// Identity of this collection instance; a rebuilt gallery gets a new id.
    pub fn id(&self) -> u64 {
        self.id
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassResidual {
    pub label: String,
    pub residual: f64,
}

/// Per-class residuals in gallery declaration order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Residuals(pub Vec<ClassResidual>);

impl Residuals {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.0
            .iter()
            .find(|r| r.label == label)
            .map(|r| r.residual)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassResidual> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(|r| r.residual).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HullSolution {
    /// Query-set coefficients, summing to one.
    pub a: DVector<f64>,
    /// Gallery coefficients, partitioned by class like the dictionary.
    pub beta: DVector<f64>,
    pub residuals: Residuals,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Gaussian { delta: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gaussian { delta: 5.0 }
    }
}

/// Augmented-Lagrangian penalty used unless a config says otherwise.
pub const DEFAULT_GAMMA: f64 = 100.0;

/// Every scalar the engines consume.
///
/// `multiplier_init = None` selects `2.5 / n_a`, which depends on the query
/// size. `gamma = None` selects half the initial multiplier; that small
/// penalty lets the alternating l1 solver oscillate around `sum(a) = 1`
/// for many iterations, so the default is the fixed [`DEFAULT_GAMMA`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub multiplier_init: Option<f64>,
    pub gamma: Option<f64>,
    pub tau: f64,
    pub kernel: KernelSpec,
    pub max_outer_iters: usize,
    pub lasso_tol: f64,
    pub lasso_max_iters: usize,
    pub qp_tol: f64,
    pub qp_max_iters: usize,
    pub atoms_per_class: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda1: 0.001,
            lambda2: 0.001,
            multiplier_init: None,
            gamma: Some(DEFAULT_GAMMA),
            tau: 1.0,
            kernel: KernelSpec::default(),
            max_outer_iters: 10,
            lasso_tol: 1e-6,
            lasso_max_iters: 10_000,
            qp_tol: 1e-8,
            qp_max_iters: 5000,
            atoms_per_class: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be nonnegative");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if let KernelSpec::Gaussian { delta } = self.kernel {
            if !(delta > 0.0 && delta.is_finite()) {
                return bad("gaussian delta must be positive");
            }
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad("gamma must be positive");
            }
        }
        if let Some(m) = self.multiplier_init {
            if !m.is_finite() {
                return bad("multiplier_init must be finite");
            }
        }
        if !(self.lasso_tol > 0.0 && self.qp_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_outer_iters == 0
            || self.lasso_max_iters == 0
            || self.qp_max_iters == 0
            || self.atoms_per_class == 0
        {
            return bad("iteration counts and atoms_per_class must be positive");
        }
        Ok(())
    }

    /// Initial multiplier for a query set with `n_a` samples.
    pub fn multiplier_for(&self, n_a: usize) -> f64 {
        self.multiplier_init.unwrap_or(2.5 / n_a as f64)
    }

    /// Penalty parameter for a query set with `n_a` samples.
    pub fn gamma_for(&self, n_a: usize) -> f64 {
        self.gamma.unwrap_or_else(|| self.multiplier_for(n_a) / 2.0)
    }
}

#[derive(Clone, Debug)]
pub struct ClassificationResult {
    pub predicted: String,
    pub residuals: Residuals,
    pub solution: HullSolution,
    pub elapsed: Duration,
}

/// `r_k = ||Y a - D_k beta_k||^2` for every gallery class.
pub fn residual_per_class(
    y: &FeatureMatrix,
    a: &DVector<f64>,
    gallery: &CompressedGalleryCollection,
    beta: &DVector<f64>,
) -> Result<Residuals> {
    if a.len() != y.cols() {
        return Err(Error::dim("a", y.cols(), a.len()));
    }
    if beta.len() != gallery.total_atoms() {
        return Err(Error::dim("beta", gallery.total_atoms(), beta.len()));
    }
    if y.rows() != gallery.dimension() {
        return Err(Error::dim("Y rows", gallery.dimension(), y.rows()));
    }
    let hull_point = y.matrix() * a;
    let dict = gallery.dictionary();
    let residuals = gallery
        .classes()
        .iter()
        .enumerate()
        .map(|(k, class)| {
            let range = gallery.class_range(k);
            let recon = dict.columns(range.start, range.len()) * beta.rows(range.start, range.len());
            ClassResidual {
                label: class.label.clone(),
                residual: (&hull_point - recon).norm_squared(),
            }
        })
        .collect();
    Ok(Residuals(residuals))
}

/// Index of the smallest residual; the earliest class wins ties.
pub fn argmin_index(residuals: &Residuals) -> Result<usize> {
    if residuals.is_empty() {
        return Err(Error::Empty("residual map".into()));
    }
    let mut best = 0;
    for (k, r) in residuals.iter().enumerate() {
        if !r.residual.is_finite() {
            return Err(Error::NonFinite("residual"));
        }
        if r.residual < residuals.0[best].residual {
            best = k;
        }
    }
    Ok(best)
}

/// Label with minimal residual.
pub fn classify(residuals: &Residuals) -> Result<String> {
    argmin_index(residuals).map(|k| residuals.0[k].label.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(pairs: &[(&str, f64)]) -> Residuals {
        Residuals(
            pairs
                .iter()
                .map(|(l, r)| ClassResidual {
                    label: l.to_string(),
                    residual: *r,
                })
                .collect(),
        )
    }

    fn single_class(atoms: Vec<Vec<f64>>) -> CompressedGalleryCollection {
        CompressedGalleryCollection::new(vec![GalleryClass {
            label: "c".into(),
            atoms: FeatureMatrix::from_columns(&atoms).unwrap(),
        }])
        .unwrap()
    }

    #[test]
    fn identical_reconstruction_has_zero_residual() {
        let y = FeatureMatrix::from_columns(&[vec![0.6, 0.8]]).unwrap();
        let g = single_class(vec![vec![0.6, 0.8]]);
        let r = residual_per_class(&y, &DVector::from_element(1, 1.0), &g, &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(r.get("c"), Some(0.0));
    }

    #[test]
    fn zero_beta_gives_query_norm() {
        let y = FeatureMatrix::from_columns(&[vec![0.0, 1.0, 0.0]]).unwrap();
        let g = single_class(vec![vec![1.0, 0.0, 0.0]]);
        let r = residual_per_class(&y, &DVector::from_element(1, 1.0), &g, &DVector::zeros(1)).unwrap();
        assert_eq!(r.get("c"), Some(1.0));
    }

    #[test]
    fn orthogonal_reconstruction_residual_is_two() {
        let y = FeatureMatrix::from_columns(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let g = single_class(vec![vec![0.0, 1.0, 0.0]]);
        let r = residual_per_class(&y, &DVector::from_element(1, 1.0), &g, &DVector::from_element(1, 1.0)).unwrap();
        assert!((r.get("c").unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn residual_rejects_mismatched_operands() {
        let y = FeatureMatrix::from_columns(&[vec![1.0, 0.0]]).unwrap();
        let g = single_class(vec![vec![1.0, 0.0]]);
        let err = residual_per_class(&y, &DVector::zeros(2), &g, &DVector::zeros(1)).unwrap_err();
        assert!(matches!(err, Error::Dimension { operand: "a", .. }));
        let err = residual_per_class(&y, &DVector::zeros(1), &g, &DVector::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::Dimension { operand: "beta", .. }));
    }

    #[test]
    fn classify_picks_minimum_and_breaks_ties_by_order() {
        assert_eq!(classify(&res(&[("A", 0.03), ("B", 0.5)])).unwrap(), "A");
        assert_eq!(classify(&res(&[("A", 1.0)])).unwrap(), "A");
        assert_eq!(classify(&res(&[("A", 0.2), ("B", 0.2)])).unwrap(), "A");
        assert_eq!(classify(&res(&[("B", 0.2), ("A", 0.2)])).unwrap(), "B");
        assert!(classify(&Residuals::default()).is_err());
    }

    #[test]
    fn gallery_rejects_bad_atoms_and_duplicates() {
        let unit = FeatureMatrix::from_columns(&[vec![1.0, 0.0]]).unwrap();
        let dup = CompressedGalleryCollection::new(vec![
            GalleryClass { label: "x".into(), atoms: unit.clone() },
            GalleryClass { label: "x".into(), atoms: unit.clone() },
        ]);
        assert!(matches!(dup, Err(Error::DuplicateLabel(_))));
        let long = FeatureMatrix::from_columns(&[vec![2.0, 0.0]]).unwrap();
        assert!(CompressedGalleryCollection::new(vec![GalleryClass { label: "x".into(), atoms: long }]).is_err());
    }

    #[test]
    fn first_frames_keeps_short_sets_whole() {
        let m = FeatureMatrix::from_columns(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(m.first_frames(50), m);
        assert_eq!(m.first_frames(2).cols(), 2);
    }

    #[test]
    fn feature_matrix_rejects_non_finite() {
        assert!(FeatureMatrix::from_columns(&[vec![f64::NAN]]).is_err());
        assert!(FeatureMatrix::from_columns(&[]).is_err());
    }
}
