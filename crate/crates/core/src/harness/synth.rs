//! Seeded synthetic image-set generators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, ImageSet};

/// Norm of the class mean inside its subspace, relative to the per-sample spread.
const SUBSPACE_MEAN_NORM: f64 = 1.0;
const SUBSPACE_SPREAD: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    /// Each class lives near a random low-dimensional linear subspace.
    Subspace,
    /// Classes are concentric spheres of increasing radius.
    Shells,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub subspace_dim: usize,
    pub noise_sigma: f64,
    pub frames_per_set: usize,
    /// The first set of each class is the gallery; the rest are queries.
    pub sets_per_class: usize,
    pub seed: u64,
    #[serde(default = "default_geometry")]
    pub geometry: Geometry,
}

fn default_geometry() -> Geometry {
    Geometry::Subspace
}

impl SyntheticSpec {
    /// Ten classes in 100 dimensions near 5-dimensional subspaces, 50 frames
    /// per set, one gallery and three query sets per class.
    pub fn canonical() -> Self {
        SyntheticSpec {
            classes: 10,
            dim: 100,
            subspace_dim: 5,
            noise_sigma: 0.05,
            frames_per_set: 50,
            sets_per_class: 4,
            seed: 42,
            geometry: Geometry::Subspace,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic spec: {m}")));
        if self.classes == 0 {
            return bad("classes must be positive");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.subspace_dim == 0 || self.subspace_dim >= self.dim {
            return bad("need 0 < subspace_dim < dim");
        }
        if self.frames_per_set == 0 {
            return bad("frames_per_set must be positive");
        }
        if self.sets_per_class < 2 {
            return bad("sets_per_class must be at least 2 (gallery + query)");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub galleries: Vec<ImageSet>,
    pub queries: Vec<ImageSet>,
}

pub fn class_label(k: usize) -> String {
    format!("class{k:02}")
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Samples `x = U (c + s g) + sigma n`, unit-normalized, where `U` is a
/// random orthonormal basis and `c` a class mean inside it.
fn subspace_sets(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<FeatureMatrix>> {
    (0..spec.classes)
        .map(|_| {
            let basis = gaussian_matrix(rng, spec.dim, spec.subspace_dim).qr().q();
            let mut mean = gaussian_vector(rng, spec.subspace_dim);
            mean *= SUBSPACE_MEAN_NORM / mean.norm();
            (0..spec.sets_per_class)
                .map(|_| {
                    let mut m = DMatrix::zeros(spec.dim, spec.frames_per_set);
                    for mut col in m.column_iter_mut() {
                        let coeffs = &mean + gaussian_vector(rng, spec.subspace_dim) * SUBSPACE_SPREAD;
                        let x = &basis * coeffs + gaussian_vector(rng, spec.dim) * spec.noise_sigma;
                        col.copy_from(&(&x / x.norm()));
                    }
                    FeatureMatrix::new(m).expect("finite synthetic samples")
                })
                .collect()
        })
        .collect()
}

/// Class `k` samples a sphere of radius `1 + k` (plus radial noise) in the
/// first `dim - 1` coordinates. The last coordinate is a constant 1 so the
/// radius survives unit normalization as a latitude.
fn shell_sets(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<FeatureMatrix>> {
    let inner = spec.dim - 1;
    (0..spec.classes)
        .map(|k| {
            let radius = 1.0 + k as f64;
            (0..spec.sets_per_class)
                .map(|_| {
                    let mut m = DMatrix::zeros(spec.dim, spec.frames_per_set);
                    for mut col in m.column_iter_mut() {
                        let dir = gaussian_vector(rng, inner);
                        let r = radius + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                        let mut x = DVector::from_element(spec.dim, 1.0);
                        x.rows_mut(0, inner).copy_from(&(dir.normalize() * r));
                        col.copy_from(&(&x / x.norm()));
                    }
                    FeatureMatrix::new(m).expect("finite synthetic samples")
                })
                .collect()
        })
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per_class = match spec.geometry {
        Geometry::Subspace => subspace_sets(spec, &mut rng),
        Geometry::Shells => shell_sets(spec, &mut rng),
    };
    let mut galleries = Vec::with_capacity(spec.classes);
    let mut queries = Vec::new();
    for (k, sets) in per_class.into_iter().enumerate() {
        let label = class_label(k);
        let mut sets = sets.into_iter();
        galleries.push(ImageSet::gallery(label.clone(), sets.next().unwrap())?);
        queries.extend(sets.map(|f| ImageSet::query(f, Some(label.clone()))));
    }
    Ok(SyntheticData { galleries, queries })
}
