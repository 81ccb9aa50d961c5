#![allow(dead_code)]

use iscrc_core::{CompressedGalleryCollection, FeatureMatrix, GalleryClass, ImageSet};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn unit_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> FeatureMatrix {
    FeatureMatrix::new(gaussian(rng, rows, cols)).unwrap().normalized().unwrap()
}

/// A gallery with the given atom counts per class, labelled `c0`, `c1`, ...
pub fn random_gallery(rng: &mut ChaCha8Rng, dim: usize, sizes: &[usize]) -> CompressedGalleryCollection {
    let classes = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| GalleryClass {
            label: format!("c{k}"),
            atoms: unit_columns(rng, dim, n),
        })
        .collect();
    CompressedGalleryCollection::new(classes).unwrap()
}

pub fn random_query(rng: &mut ChaCha8Rng, dim: usize, frames: usize) -> ImageSet {
    ImageSet::query(unit_columns(rng, dim, frames), None)
}

/// Splits `total` atoms into between one and `max_classes` nonempty classes.
pub fn random_sizes(rng: &mut ChaCha8Rng, total: usize, max_classes: usize) -> Vec<usize> {
    let k = rng.random_range(1..=max_classes.min(total));
    let mut sizes = vec![1; k];
    for _ in k..total {
        sizes[rng.random_range(0..k)] += 1;
    }
    sizes
}

/// Exact lasso minimum `min ||X b - y||^2 + lambda ||b||_1` by enumerating
/// every sign pattern and solving the stationarity equations on its support.
pub fn lasso_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> f64 {
    let n = x.ncols();
    let objective = |b: &DVector<f64>| (x * b - y).norm_squared() + lambda * b.abs().sum();
    let mut best = objective(&DVector::zeros(n));
    let patterns = 3usize.pow(n as u32);
    for code in 0..patterns {
        let mut signs = vec![0i8; n];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as i8 - 1;
            c /= 3;
        }
        let support: Vec<usize> = (0..n).filter(|&i| signs[i] != 0).collect();
        if support.is_empty() {
            continue;
        }
        let xs = x.select_columns(&support);
        // a minimizer always exists on a support with independent columns
        if xs.rank(1e-9) < support.len() {
            continue;
        }
        let Some(chol) = xs.tr_mul(&xs).cholesky() else { continue };
        let s = DVector::from_iterator(support.len(), support.iter().map(|&i| signs[i] as f64));
        let bs = chol.solve(&(xs.tr_mul(y) - s.clone() * (lambda / 2.0)));
        if bs.iter().zip(s.iter()).any(|(v, sg)| v * sg <= 0.0) {
            continue;
        }
        let mut b = DVector::zeros(n);
        for (j, &i) in support.iter().enumerate() {
            b[i] = bs[j];
        }
        best = best.min(objective(&b));
    }
    best
}

/// Unique minimizer of `z^T H z` over `{sum a = 1, a >= 0} x {sum b = 1, b >= 0}`
/// for positive definite `H`, by enumerating supports and solving the
/// equality-constrained problem on each.
pub fn simplex_qp_oracle(h: &DMatrix<f64>, na: usize) -> (DVector<f64>, DVector<f64>, f64) {
    let n = h.nrows();
    let nb = n - na;
    let mut best: Option<(DVector<f64>, f64)> = None;
    for ma in 1..(1usize << na) {
        for mb in 1..(1usize << nb) {
            let support: Vec<usize> = (0..na)
                .filter(|i| ma >> i & 1 == 1)
                .chain((0..nb).filter(|j| mb >> j & 1 == 1).map(|j| na + j))
                .collect();
            let s = support.len();
            let mut kkt = DMatrix::zeros(s + 2, s + 2);
            for (p, &i) in support.iter().enumerate() {
                for (q, &j) in support.iter().enumerate() {
                    kkt[(p, q)] = 2.0 * h[(i, j)];
                }
                let block = if i < na { s } else { s + 1 };
                kkt[(p, block)] = 1.0;
                kkt[(block, p)] = 1.0;
            }
            let mut rhs = DVector::zeros(s + 2);
            rhs[s] = 1.0;
            rhs[s + 1] = 1.0;
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            if sol.rows(0, s).iter().any(|&v| v < 0.0) {
                continue;
            }
            let mut z = DVector::zeros(n);
            for (p, &i) in support.iter().enumerate() {
                z[i] = sol[p];
            }
            let f = z.dot(&(h * &z));
            if best.as_ref().is_none_or(|(_, g)| f < *g) {
                best = Some((z, f));
            }
        }
    }
    let (z, f) = best.expect("some support is feasible");
    (z.rows(0, na).into_owned(), z.rows(na, nb).into_owned(), f)
}
