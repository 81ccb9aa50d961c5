mod common;

use std::sync::Arc;

use iscrc_core::harness::bench::{run_benchmark, BenchConfig, DataSource, Method};
use iscrc_core::harness::dataset::{load_dataset, write_dataset};
use iscrc_core::harness::synth::{generate_synthetic, Geometry, SyntheticSpec};
use iscrc_core::kch::{build_gram_with, classify_kch, GramCache};
use iscrc_core::rh::solve_l2;
use iscrc_core::{CompressedGalleryCollection, KernelSpec, SolverConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn noiseless_query_separates_by_residual() {
    let spec = SyntheticSpec {
        classes: 4,
        dim: 30,
        subspace_dim: 3,
        noise_sigma: 0.0,
        frames_per_set: 20,
        sets_per_class: 2,
        seed: 5,
        geometry: Geometry::Subspace,
    };
    let data = generate_synthetic(&spec).unwrap();
    let gallery = CompressedGalleryCollection::uncompressed(&data.galleries).unwrap();
    let cfg = SolverConfig {
        lambda1: 1e-12,
        lambda2: 1e-12,
        ..Default::default()
    };
    for q in &data.queries {
        let s = solve_l2(q, &gallery, &cfg).unwrap();
        let own = q.label().unwrap();
        for r in s.residuals.iter() {
            if r.label == own {
                assert!(r.residual < 1e-6, "{own}: {}", r.residual);
            } else {
                assert!(r.residual > 1e-6, "{} vs {own}: {}", r.label, r.residual);
            }
        }
    }
}

fn shell_accuracy(kernel: KernelSpec) -> f64 {
    let spec = SyntheticSpec {
        classes: 2,
        dim: 3,
        subspace_dim: 1,
        noise_sigma: 0.1,
        frames_per_set: 30,
        sets_per_class: 6,
        seed: 7,
        geometry: Geometry::Shells,
    };
    let data = generate_synthetic(&spec).unwrap();
    let gallery = CompressedGalleryCollection::uncompressed(&data.galleries).unwrap();
    let cfg = SolverConfig {
        kernel,
        ..Default::default()
    };
    let correct = data
        .queries
        .iter()
        .filter(|q| classify_kch(q, &gallery, &cfg).unwrap().predicted == q.label().unwrap())
        .count();
    correct as f64 / data.queries.len() as f64
}

#[test]
fn gaussian_kernel_handles_concentric_shells() {
    let linear = shell_accuracy(KernelSpec::Linear);
    let gaussian = shell_accuracy(KernelSpec::Gaussian { delta: 0.5 });
    assert!(gaussian >= linear, "gaussian {gaussian} < linear {linear}");
    assert!(gaussian >= 0.9, "gaussian {gaussian}");
}

#[test]
fn cached_gallery_gram_is_bit_identical_across_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = common::random_gallery(&mut rng, 8, &[3, 4]);
    let cache = GramCache::new();
    let spec = KernelSpec::default();
    let first = build_gram_with(&common::random_query(&mut rng, 8, 3), &g, &spec, &cache).unwrap();
    let second = build_gram_with(&common::random_query(&mut rng, 8, 5), &g, &spec, &cache).unwrap();
    assert!(Arc::ptr_eq(&first.kdd, &second.kdd));
    let fresh = build_gram_with(&common::random_query(&mut rng, 8, 2), &g, &spec, &GramCache::new()).unwrap();
    assert_eq!(*first.kdd, *fresh.kdd);
    assert_eq!(cache.len(), 1);
}

#[test]
fn dataset_written_to_disk_benchmarks_like_the_generator() {
    let spec = SyntheticSpec {
        classes: 3,
        dim: 20,
        subspace_dim: 3,
        noise_sigma: 0.05,
        frames_per_set: 12,
        sets_per_class: 3,
        seed: 21,
        geometry: Geometry::Subspace,
    };
    let data = generate_synthetic(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &data.galleries, &data.queries).unwrap();
    let loaded = load_dataset(&manifest, None).unwrap();
    assert_eq!(loaded.galleries, data.galleries);
    assert_eq!(loaded.queries, data.queries);

    let mut in_memory = BenchConfig::new(DataSource::Synthetic(spec));
    in_memory.folds = 3;
    in_memory.kch_atoms_per_class = 6;
    in_memory.solver.atoms_per_class = 4;
    let from_disk = BenchConfig {
        data: DataSource::Manifest { path: manifest },
        ..in_memory.clone()
    };
    let a = run_benchmark(&in_memory).unwrap();
    let b = run_benchmark(&from_disk).unwrap();
    for m in Method::ALL {
        assert_eq!(a.method(m).unwrap().predictions, b.method(m).unwrap().predictions, "{m}");
    }
    assert_eq!(a.folds, b.folds);
}
