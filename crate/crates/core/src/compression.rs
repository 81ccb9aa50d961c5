//! Gallery compression by dictionary learning.
//!
//! Each gallery set `X` is replaced by a small unit-norm dictionary `D`
//! learned by alternating
//!
//! 1. sparse coding of every column of `X` over `D` (lasso, warm started),
//! 2. atom-by-atom updates `d_j = E_j c_j^T / ||E_j c_j^T||`, where `E_j` is
//!    the residual with atom `j` removed and `c_j` its row of codes.
//!
//! Both steps are exact block minimizations of
//! `||X - D C||^2 + code_lambda ||C||_1`, so the objective never increases.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CompressedGalleryCollection, FeatureMatrix, GalleryClass, ImageSet};
use crate::solvers::{lasso_solve_from, LassoProblem};

const CODE_TOL: f64 = 1e-9;
const CODE_MAX_SWEEPS: usize = 5000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DictLearnConfig {
    pub atoms: usize,
    pub code_lambda: f64,
    pub max_iters: usize,
    /// Stop once the relative objective change falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for DictLearnConfig {
    fn default() -> Self {
        DictLearnConfig {
            atoms: 10,
            code_lambda: 0.001,
            max_iters: 30,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl DictLearnConfig {
    pub fn with_atoms(atoms: usize) -> Self {
        DictLearnConfig {
            atoms,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedSet {
    pub atoms: FeatureMatrix,
    /// `||X - D C||^2 + code_lambda ||C||_1` after each outer iteration.
    pub objective_trace: Vec<f64>,
    /// Atom count actually used (the request is clamped to the sample count).
    pub atoms_used: usize,
    pub clamped: bool,
    /// Unused atoms that were reseeded with the worst-reconstructed sample.
    pub reinitialized: usize,
}

fn initial_columns(x: &DMatrix<f64>, k: usize, seed: u64) -> Vec<usize> {
    let n = x.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    if n > k {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut seen = HashSet::new();
    let mut picked = Vec::with_capacity(k);
    let mut skipped = Vec::new();
    for &j in &order {
        let key: Vec<u64> = x.column(j).iter().map(|v| v.to_bits()).collect();
        if x.column(j).norm() > 0.0 && seen.insert(key) {
            picked.push(j);
            if picked.len() == k {
                return picked;
            }
        } else {
            skipped.push(j);
        }
    }
    // not enough distinct columns; duplicates are left for collapse handling
    picked.extend(skipped.into_iter().take(k - picked.len()));
    picked
}

fn normalized_or_basis(v: DVector<f64>, fallback: usize) -> DVector<f64> {
    let norm = v.norm();
    if norm > 0.0 {
        v / norm
    } else {
        let mut e = DVector::zeros(v.len());
        e[fallback % v.len()] = 1.0;
        e
    }
}

fn objective(resid: &DMatrix<f64>, codes: &DMatrix<f64>, lambda: f64) -> f64 {
    resid.norm_squared() + lambda * codes.iter().map(|c| c.abs()).sum::<f64>()
}

pub fn compress_set(set: &ImageSet, cfg: &DictLearnConfig) -> Result<CompressedSet> {
    if cfg.atoms == 0 || cfg.max_iters == 0 || !(cfg.tol > 0.0) || !(cfg.code_lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("dictionary learning config {cfg:?}")));
    }
    let x = set.features.matrix();
    let n = x.ncols();
    let k = cfg.atoms.min(n);

    let mut dict = DMatrix::zeros(x.nrows(), k);
    for (slot, &j) in initial_columns(x, k, cfg.seed).iter().enumerate() {
        dict.set_column(slot, &normalized_or_basis(x.column(j).into_owned(), slot));
    }
    let mut codes = DMatrix::<f64>::zeros(k, n);
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut reinitialized = 0;

    for _ in 0..cfg.max_iters {
        for i in 0..n {
            let target = x.column(i).into_owned();
            let problem = LassoProblem::new(&dict, &target, cfg.code_lambda)?;
            let init = codes.column(i).into_owned();
            let coded = lasso_solve_from(&problem, &init, CODE_TOL, CODE_MAX_SWEEPS)?.coef;
            codes.set_column(i, &coded);
        }
        let mut resid = x - &dict * &codes;

        for j in 0..k {
            let row = codes.row(j).transpose();
            let weight = row.norm_squared();
            if weight == 0.0 {
                let worst = resid
                    .column_iter()
                    .enumerate()
                    .map(|(i, c)| (i, c.norm_squared()))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                    .0;
                dict.set_column(j, &normalized_or_basis(x.column(worst).into_owned(), j));
                reinitialized += 1;
                continue;
            }
            let old = dict.column(j).into_owned();
            let pull = &resid * &row + &old * weight;
            if pull.norm() == 0.0 {
                continue;
            }
            let new = pull.normalize();
            // resid = X - D C changes by (old - new) c_j^T
            resid.ger(1.0, &(&old - &new), &row, 1.0);
            dict.set_column(j, &new);
        }

        let value = objective(&resid, &codes, cfg.code_lambda);
        let settled = trace
            .last()
            .is_some_and(|&prev: &f64| (prev - value).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE));
        trace.push(value);
        if settled {
            break;
        }
    }

    Ok(CompressedSet {
        atoms: FeatureMatrix::new(dict)?,
        objective_trace: trace,
        atoms_used: k,
        clamped: k < cfg.atoms,
        reinitialized,
    })
}

/// Compresses every gallery set (in parallel, one class per task) and
/// concatenates the dictionaries in declaration order.
pub fn compress_gallery_with_reports(
    sets: &[ImageSet],
    cfg: &DictLearnConfig,
) -> Result<(CompressedGalleryCollection, Vec<CompressedSet>)> {
    let mut labels = HashSet::new();
    for s in sets {
        let label = s.label().ok_or_else(|| Error::Empty("gallery set label".into()))?;
        if !labels.insert(label) {
            return Err(Error::DuplicateLabel(label.to_string()));
        }
    }
    let compressed = sets
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let class_cfg = DictLearnConfig {
                seed: cfg.seed.wrapping_add(k as u64),
                ..cfg.clone()
            };
            compress_set(s, &class_cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let classes = sets
        .iter()
        .zip(&compressed)
        .map(|(s, c)| GalleryClass {
            label: s.label().unwrap().to_string(),
            atoms: c.atoms.clone(),
        })
        .collect();
    Ok((CompressedGalleryCollection::new(classes)?, compressed))
}

pub fn compress_gallery(sets: &[ImageSet], cfg: &DictLearnConfig) -> Result<CompressedGalleryCollection> {
    compress_gallery_with_reports(sets, cfg).map(|(g, _)| g)
}
