//! Kernelized convex-hull engine.
//!
//! The query hull point `phi(Y) a` and the joint gallery point `phi(D) beta`
//! are both restricted to (capped) simplices, and their squared distance in
//! feature space
//!
//! ```text
//! a^T Kyy a - 2 a^T Kyd beta + beta^T Kdd beta
//! ```
//!
//! is minimized as a two-block QP. Only kernel evaluations are needed; the
//! gallery block `Kdd` is computed once per gallery and kernel and cached.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::{Arc, OnceLock, RwLock};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::model::{
    classify, ClassResidual, ClassificationResult, CompressedGalleryCollection, HullSolution,
    ImageSet, KernelSpec, Residuals, SolverConfig,
};
use crate::solvers::{qp_capped_simplex_blocks, CappedSimplex};

/// Kernel residuals this far below zero are rounding; anything lower means
/// the Gram matrix is not positive semidefinite.
pub const NEGATIVE_RESIDUAL_TOL: f64 = 1e-8;

/// Galleries kept in the global Gram cache before the oldest is dropped.
const CACHE_CAPACITY: usize = 16;

pub fn kernel_eval(x: DVectorView<'_, f64>, y: DVectorView<'_, f64>, spec: &KernelSpec) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim("kernel argument", x.len(), y.len()));
    }
    Ok(match *spec {
        KernelSpec::Linear => x.dot(&y),
        KernelSpec::Gaussian { delta } => {
            let dist: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            (-dist / (2.0 * delta * delta)).exp()
        }
    })
}

/// `K[i, j] = k(x_i, y_j)` over the columns of `x` and `y`.
pub fn cross_gram(x: &DMatrix<f64>, y: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::dim("kernel argument", x.nrows(), y.nrows()));
    }
    let mut k = DMatrix::zeros(x.ncols(), y.ncols());
    for j in 0..y.ncols() {
        for i in 0..x.ncols() {
            k[(i, j)] = kernel_eval(x.column(i), y.column(j), spec)?;
        }
    }
    Ok(k)
}

/// Symmetric Gram matrix of the columns of `x`; only one triangle is
/// evaluated, so the result is exactly symmetric.
pub fn self_gram(x: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let n = x.ncols();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = kernel_eval(x.column(i), x.column(j), spec)?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum KernelKey {
    Linear,
    Gaussian(u64),
}

impl From<&KernelSpec> for KernelKey {
    fn from(spec: &KernelSpec) -> Self {
        match *spec {
            KernelSpec::Linear => KernelKey::Linear,
            KernelSpec::Gaussian { delta } => KernelKey::Gaussian(delta.to_bits()),
        }
    }
}

/// Gallery Gram matrices keyed by gallery identity and kernel.
///
/// Galleries are immutable and every construction gets a fresh id, so a
/// changed gallery can never hit a stale entry.
#[derive(Debug, Default)]
pub struct GramCache {
    entries: RwLock<HashMap<(u64, KernelKey), (u64, Arc<DMatrix<f64>>)>>,
    clock: std::sync::atomic::AtomicU64,
}

impl GramCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// The process-wide cache used by [`build_gram`].
    pub fn global() -> &'static GramCache {
        static CACHE: OnceLock<GramCache> = OnceLock::new();
        CACHE.get_or_init(GramCache::new)
    }

    pub fn gallery_gram(
        &self,
        gallery: &CompressedGalleryCollection,
        spec: &KernelSpec,
    ) -> Result<Arc<DMatrix<f64>>> {
        let key = (gallery.id(), KernelKey::from(spec));
        if let Some((_, k)) = self.entries.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(Arc::clone(k));
        }
        let computed = Arc::new(self_gram(gallery.dictionary(), spec)?);
        let stamp = self.clock.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let mut entries = self.entries.write().unwrap_or_else(|e| e.into_inner());
        // another thread may have filled the slot meanwhile; keep its copy
        if let Some((_, k)) = entries.get(&key) {
            return Ok(Arc::clone(k));
        }
        if entries.len() >= CACHE_CAPACITY {
            if let Some(oldest) = entries.iter().min_by_key(|(_, (t, _))| *t).map(|(k, _)| k.clone()) {
                entries.remove(&oldest);
            }
        }
        entries.insert(key, (stamp, Arc::clone(&computed)));
        Ok(computed)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.entries.write().unwrap_or_else(|e| e.into_inner()).clear();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GramBlocks {
    pub kyy: DMatrix<f64>,
    pub kyd: DMatrix<f64>,
    pub kdd: Arc<DMatrix<f64>>,
    pub class_offsets: Vec<Range<usize>>,
}

impl GramBlocks {
    /// `[[Kyy, -Kyd], [-Kyd^T, Kdd]]`.
    pub fn hessian(&self) -> DMatrix<f64> {
        let na = self.kyy.nrows();
        let nb = self.kdd.nrows();
        let mut h = DMatrix::zeros(na + nb, na + nb);
        h.view_mut((0, 0), (na, na)).copy_from(&self.kyy);
        h.view_mut((0, na), (na, nb)).copy_from(&(-&self.kyd));
        h.view_mut((na, 0), (nb, na)).copy_from(&(-self.kyd.transpose()));
        h.view_mut((na, na), (nb, nb)).copy_from(&*self.kdd);
        h
    }
}

pub fn build_gram_with(
    y: &ImageSet,
    gallery: &CompressedGalleryCollection,
    spec: &KernelSpec,
    cache: &GramCache,
) -> Result<GramBlocks> {
    if y.dim() != gallery.dimension() {
        return Err(Error::dim("query feature dimension", gallery.dimension(), y.dim()));
    }
    let ym = y.features.matrix();
    Ok(GramBlocks {
        kyy: self_gram(ym, spec)?,
        kyd: cross_gram(ym, gallery.dictionary(), spec)?,
        kdd: cache.gallery_gram(gallery, spec)?,
        class_offsets: (0..gallery.num_classes()).map(|k| gallery.class_range(k)).collect(),
    })
}

pub fn build_gram(y: &ImageSet, gallery: &CompressedGalleryCollection, spec: &KernelSpec) -> Result<GramBlocks> {
    build_gram_with(y, gallery, spec, GramCache::global())
}

/// `||phi(Y) a - phi(D_k) beta_k||^2` for every class, from the Gram blocks.
pub fn kernel_residuals(
    gram: &GramBlocks,
    labels: &[&str],
    a: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<Residuals> {
    let query_term = a.dot(&(&gram.kyy * a));
    let mut out = Vec::with_capacity(labels.len());
    for (range, &label) in gram.class_offsets.iter().zip(labels) {
        let b = beta.rows(range.start, range.len());
        let cross = a.dot(&(gram.kyd.columns(range.start, range.len()) * b));
        let own = b.dot(&(gram.kdd.view((range.start, range.start), (range.len(), range.len())) * b));
        let r = query_term - 2.0 * cross + own;
        if !r.is_finite() {
            return Err(Error::NonFinite("kernel residual"));
        }
        if r < -NEGATIVE_RESIDUAL_TOL {
            return Err(Error::BrokenGram {
                label: label.to_string(),
                value: r,
            });
        }
        out.push(ClassResidual {
            label: label.to_string(),
            residual: r.max(0.0),
        });
    }
    Ok(Residuals(out))
}

pub fn solve_kch_with(
    y: &ImageSet,
    gallery: &CompressedGalleryCollection,
    cfg: &SolverConfig,
    cache: &GramCache,
) -> Result<HullSolution> {
    cfg.validate()?;
    let ca = CappedSimplex::new(y.len(), cfg.tau)?;
    let cb = CappedSimplex::new(gallery.total_atoms(), cfg.tau)?;
    let gram = build_gram_with(y, gallery, &cfg.kernel, cache)?;
    let qp = qp_capped_simplex_blocks(&gram.hessian(), &ca, &cb, cfg.qp_tol, cfg.qp_max_iters)?;
    let labels: Vec<&str> = gallery.labels().collect();
    let residuals = kernel_residuals(&gram, &labels, &qp.a, &qp.beta)?;
    Ok(HullSolution {
        a: qp.a,
        beta: qp.beta,
        residuals,
        objective_trace: qp.trace,
        iterations: qp.iterations,
        converged: qp.converged,
    })
}

pub fn solve_kch(y: &ImageSet, gallery: &CompressedGalleryCollection, cfg: &SolverConfig) -> Result<HullSolution> {
    solve_kch_with(y, gallery, cfg, GramCache::global())
}

pub fn classify_kch(
    y: &ImageSet,
    gallery: &CompressedGalleryCollection,
    cfg: &SolverConfig,
) -> Result<ClassificationResult> {
    let start = Instant::now();
    let solution = solve_kch(y, gallery, cfg)?;
    let predicted = classify(&solution.residuals)?;
    Ok(ClassificationResult {
        predicted,
        residuals: solution.residuals.clone(),
        solution,
        elapsed: start.elapsed(),
    })
}
