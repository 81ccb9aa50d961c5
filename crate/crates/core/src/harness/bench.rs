//! Benchmark orchestration: build galleries, split the query sets into
//! disjoint folds, classify every query with each method and summarize.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compression::{compress_gallery, DictLearnConfig};
use crate::error::{Error, Result};
use crate::harness::baseline::{classify_baseline, Baseline};
use crate::harness::dataset::{load_dataset, Dataset};
use crate::harness::synth::{generate_synthetic, SyntheticSpec};
use crate::kch::classify_kch;
use crate::model::{ClassificationResult, CompressedGalleryCollection, ImageSet, SolverConfig};
use crate::rh::{classify_rh, Norm};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "ISCRC_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rh-l1")]
    RhL1,
    #[serde(rename = "rh-l2")]
    RhL2,
    #[serde(rename = "kch")]
    Kch,
    #[serde(rename = "src")]
    Src,
    #[serde(rename = "crc")]
    Crc,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::RhL1, Method::RhL2, Method::Kch, Method::Src, Method::Crc];

    pub fn name(self) -> &'static str {
        match self {
            Method::RhL1 => "rh-l1",
            Method::RhL2 => "rh-l2",
            Method::Kch => "kch",
            Method::Src => "src",
            Method::Crc => "crc",
        }
    }

    pub fn classify(
        self,
        query: &ImageSet,
        gallery: &CompressedGalleryCollection,
        cfg: &SolverConfig,
    ) -> Result<ClassificationResult> {
        match self {
            Method::RhL1 => classify_rh(query, gallery, cfg, Norm::L1),
            Method::RhL2 => classify_rh(query, gallery, cfg, Norm::L2),
            Method::Kch => classify_kch(query, gallery, cfg),
            Method::Src => classify_baseline(query, gallery, cfg, Baseline::Src),
            Method::Crc => classify_baseline(query, gallery, cfg, Baseline::Crc),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}` (expected rh-l1, rh-l2, kch, src or crc)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// Relative manifest paths are resolved against the config file.
    Manifest { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub data: DataSource,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Drives the fold shuffle and dictionary initialization.
    #[serde(default)]
    pub seed: u64,
    /// Keep only the first `frames` frames of every set.
    #[serde(default)]
    pub frames: Option<usize>,
    /// `false` uses the raw gallery frames (unit-normalized) as atoms.
    #[serde(default = "yes")]
    pub compress: bool,
    /// Atoms per class for the kernel engine; the other methods use
    /// `solver.atoms_per_class`.
    #[serde(default = "default_kch_atoms")]
    pub kch_atoms_per_class: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub dictionary: DictLearnConfig,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_folds() -> usize {
    10
}

fn yes() -> bool {
    true
}

fn default_kch_atoms() -> usize {
    50
}

impl BenchConfig {
    pub fn new(data: DataSource) -> Self {
        BenchConfig {
            data,
            methods: all_methods(),
            folds: default_folds(),
            seed: 0,
            frames: None,
            compress: true,
            kch_atoms_per_class: default_kch_atoms(),
            solver: SolverConfig::default(),
            dictionary: DictLearnConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods selected".into()));
        }
        if self.folds == 0 {
            return Err(Error::InvalidConfig("folds must be positive".into()));
        }
        if self.kch_atoms_per_class == 0 {
            return Err(Error::InvalidConfig("kch_atoms_per_class must be positive".into()));
        }
        if self.frames == Some(0) {
            return Err(Error::InvalidConfig("frames must be positive".into()));
        }
        self.solver.validate()
    }

    /// Reads a JSON config; a set `ISCRC_SEED` replaces `seed`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: BenchConfig = serde_json::from_str(&text).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            message: format!("benchmark config: {e}"),
        })?;
        if let DataSource::Manifest { path: manifest } = &mut cfg.data {
            if manifest.is_relative() {
                *manifest = path.parent().unwrap_or(Path::new("")).join(&*manifest);
            }
        }
        if let Some(seed) = seed_override()? {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn atoms_for(&self, method: Method) -> Option<usize> {
        if !self.compress {
            return None;
        }
        Some(match method {
            Method::Kch => self.kch_atoms_per_class,
            _ => self.solver.atoms_per_class,
        })
    }
}

/// The value of `ISCRC_SEED`, if set.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        _ => Ok(None),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    /// `None` means the raw gallery frames were used.
    pub atoms_per_class: Option<usize>,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub fold_accuracies: Vec<f64>,
    /// Overall fraction of correctly classified query sets.
    pub accuracy_overall: Option<f64>,
    pub mean_elapsed_ms: Option<f64>,
    pub converged_fraction: Option<f64>,
    /// Predicted label per query set, in query order.
    pub predictions: Vec<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub num_queries: usize,
    /// Query indices per fold; folds are disjoint and cover every query.
    pub folds: Vec<Vec<usize>>,
    pub methods: Vec<MethodReport>,
}

impl BenchReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// Aligned plain-text summary table.
    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.1}", 100.0 * x));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>10} {:>7} {:>11} {:>9}  note",
            "method", "atoms", "acc (%)", "± std", "ms / query", "converged"
        );
        for r in &self.methods {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>10} {:>7} {:>11} {:>9}  {}",
                r.method.name(),
                r.atoms_per_class.map_or("raw".to_string(), |a| a.to_string()),
                pct(r.accuracy_mean),
                pct(r.accuracy_std),
                r.mean_elapsed_ms.map_or("-".to_string(), |t| format!("{t:.2}")),
                pct(r.converged_fraction),
                r.error.as_deref().unwrap_or("")
            );
        }
        let _ = writeln!(out, "{} query sets in {} folds", self.num_queries, self.folds.len());
        out
    }

    /// The report with wall-clock fields cleared, for reproducibility checks.
    pub fn without_timings(&self) -> BenchReport {
        let mut r = self.clone();
        for m in &mut r.methods {
            m.mean_elapsed_ms = None;
        }
        r
    }
}

/// Shuffles query indices with `seed` and deals them round-robin into
/// `folds` disjoint folds (fewer if there are fewer queries).
pub fn assign_folds(num_queries: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..num_queries).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = folds.min(num_queries).max(1);
    let mut out = vec![Vec::new(); k];
    for (i, q) in order.into_iter().enumerate() {
        out[i % k].push(q);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn load_data(cfg: &BenchConfig) -> Result<Dataset> {
    let mut data = match &cfg.data {
        DataSource::Synthetic(spec) => {
            let d = generate_synthetic(spec)?;
            Dataset {
                galleries: d.galleries,
                queries: d.queries,
            }
        }
        DataSource::Manifest { path } => load_dataset(path, None)?,
    };
    if let Some(n) = cfg.frames {
        for s in data.galleries.iter_mut().chain(data.queries.iter_mut()) {
            *s = s.first_frames(n);
        }
    }
    if data.queries.is_empty() {
        return Err(Error::Empty("benchmark has no query sets".into()));
    }
    if data.queries.iter().any(|q| q.label().is_none()) {
        return Err(Error::Empty("benchmark query sets need ground-truth labels".into()));
    }
    Ok(data)
}

fn build_gallery(data: &Dataset, atoms: Option<usize>, cfg: &BenchConfig) -> Result<CompressedGalleryCollection> {
    match atoms {
        None => CompressedGalleryCollection::uncompressed(&data.galleries),
        Some(a) => compress_gallery(
            &data.galleries,
            &DictLearnConfig {
                atoms: a,
                seed: cfg.seed,
                ..cfg.dictionary.clone()
            },
        ),
    }
}

fn evaluate(
    method: Method,
    gallery: &CompressedGalleryCollection,
    data: &Dataset,
    folds: &[Vec<usize>],
    cfg: &BenchConfig,
    atoms: Option<usize>,
) -> Result<MethodReport> {
    let results = data
        .queries
        .par_iter()
        .map(|q| method.classify(q, gallery, &cfg.solver))
        .collect::<Result<Vec<_>>>()?;
    let correct: Vec<bool> = results
        .iter()
        .zip(&data.queries)
        .map(|(r, q)| Some(r.predicted.as_str()) == q.label())
        .collect();
    let fold_accuracies: Vec<f64> = folds
        .iter()
        .map(|f| f.iter().filter(|&&i| correct[i]).count() as f64 / f.len() as f64)
        .collect();
    let (mean, std) = mean_std(&fold_accuracies);
    let n = results.len() as f64;
    let elapsed: Duration = results.iter().map(|r| r.elapsed).sum();
    Ok(MethodReport {
        method,
        atoms_per_class: atoms,
        accuracy_mean: Some(mean),
        accuracy_std: Some(std),
        fold_accuracies,
        accuracy_overall: Some(correct.iter().filter(|&&c| c).count() as f64 / n),
        mean_elapsed_ms: Some(elapsed.as_secs_f64() * 1e3 / n),
        converged_fraction: Some(results.iter().filter(|r| r.solution.converged).count() as f64 / n),
        predictions: results.into_iter().map(|r| r.predicted).collect(),
        error: None,
    })
}

fn failed(method: Method, atoms: Option<usize>, e: &Error) -> MethodReport {
    MethodReport {
        method,
        atoms_per_class: atoms,
        accuracy_mean: None,
        accuracy_std: None,
        fold_accuracies: Vec::new(),
        accuracy_overall: None,
        mean_elapsed_ms: None,
        converged_fraction: None,
        predictions: Vec::new(),
        error: Some(e.to_string()),
    }
}

/// Runs every configured method on already loaded data. A method that
/// fails gets an error note in its row; the others still run.
pub fn run_benchmark_on(cfg: &BenchConfig, data: &Dataset) -> Result<BenchReport> {
    cfg.validate()?;
    let folds = assign_folds(data.queries.len(), cfg.folds, cfg.seed);
    let mut galleries: HashMap<Option<usize>, std::result::Result<CompressedGalleryCollection, String>> =
        HashMap::new();
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let atoms = cfg.atoms_for(method);
        let gallery = galleries
            .entry(atoms)
            .or_insert_with(|| build_gallery(data, atoms, cfg).map_err(|e| e.to_string()));
        let report = match gallery {
            Ok(g) => evaluate(method, g, data, &folds, cfg, atoms).unwrap_or_else(|e| failed(method, atoms, &e)),
            Err(msg) => failed(method, atoms, &Error::InvalidConfig(format!("gallery: {msg}"))),
        };
        methods.push(report);
    }
    Ok(BenchReport {
        config: cfg.clone(),
        num_queries: data.queries.len(),
        folds,
        methods,
    })
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    run_benchmark_on(cfg, &data)
}

/// [`run_benchmark`] on a pool of `jobs` threads.
pub fn run_benchmark_with_jobs(cfg: &BenchConfig, jobs: usize) -> Result<BenchReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| run_benchmark(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchConfig {
        let mut cfg = BenchConfig::new(DataSource::Synthetic(SyntheticSpec {
            classes: 3,
            dim: 20,
            subspace_dim: 3,
            noise_sigma: 0.05,
            frames_per_set: 12,
            sets_per_class: 3,
            seed: 1,
            geometry: crate::harness::synth::Geometry::Subspace,
        }));
        cfg.folds = 4;
        cfg.solver.atoms_per_class = 5;
        cfg.kch_atoms_per_class = 8;
        cfg
    }

    #[test]
    fn folds_are_disjoint_and_cover() {
        let folds = assign_folds(23, 5, 9);
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(assign_folds(3, 10, 0).len(), 3);
        assert_eq!(assign_folds(23, 5, 9), folds);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("svm".parse::<Method>().is_err());
    }

    #[test]
    fn report_has_a_row_per_method_and_is_reproducible() {
        let cfg = tiny();
        let r1 = run_benchmark(&cfg).unwrap();
        let r2 = run_benchmark(&cfg).unwrap();
        assert_eq!(r1.methods.len(), 5);
        assert_eq!(r1.num_queries, 6);
        assert_eq!(r1.without_timings(), r2.without_timings());
        for m in &r1.methods {
            assert!(m.error.is_none(), "{:?}", m.error);
            let acc = m.accuracy_mean.unwrap();
            assert!((0.0..=1.0).contains(&acc));
        }
        assert_eq!(r1.method(Method::Kch).unwrap().atoms_per_class, Some(8));
        assert!(r1.table().lines().count() >= 7);
    }

    #[test]
    fn failing_method_gets_a_note() {
        let mut cfg = tiny();
        cfg.methods = vec![Method::RhL2, Method::Kch];
        cfg.solver.tau = 0.01;
        let r = run_benchmark(&cfg).unwrap();
        assert!(r.method(Method::RhL2).unwrap().error.is_none());
        let kch = r.method(Method::Kch).unwrap();
        assert!(kch.error.as_deref().unwrap().contains("infeasible"));
        assert!(r.table().contains("infeasible"));
    }

    #[test]
    fn config_json_defaults() {
        let cfg: BenchConfig = serde_json::from_str(
            r#"{"data": {"kind": "synthetic", "classes": 2, "dim": 5, "subspace_dim": 2,
                "noise_sigma": 0.0, "frames_per_set": 3, "sets_per_class": 2, "seed": 4},
                "methods": ["rh-l2", "crc"]}"#,
        )
        .unwrap();
        assert_eq!(cfg.methods, vec![Method::RhL2, Method::Crc]);
        assert_eq!(cfg.folds, 10);
        assert_eq!(cfg.solver, SolverConfig::default());
        assert!(serde_json::from_str::<BenchConfig>(r#"{"data": {"kind": "manifest", "path": "m.json"}, "bogus": 1}"#).is_err());
    }
}
