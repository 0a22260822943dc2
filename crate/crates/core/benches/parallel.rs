//! Hot loops on the default rayon pool against a single-thread pool. Built without the
//! `parallel` feature, both variants run the sequential fallback.

use std::collections::HashSet;

use coldstart_core::dataset::{generate_synthetic, SyntheticConfig, PLANTED_SPACE};
use coldstart_core::embedding::top_k_by_similarity;
use coldstart_core::eval::score_recommendations;
use coldstart_core::recommend::{recommend_full_personalized, PopularityList};
use coldstart_core::segmentation::{kmeans, KMeansConfig};
use coldstart_core::trainers::{build_affinity_matrix, train_als, AffinityWeights, AlsConfig};
use coldstart_core::Split;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("one-thread", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("default", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn bench(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticConfig {
        tracks: 1000,
        warm_users: 1500,
        cold_users: 300,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let b = &data.bundle;
    let tracks = &b.space(PLANTED_SPACE).unwrap().tracks;
    let affinity = build_affinity_matrix(&b.log, &b.catalog, AffinityWeights::default());
    let als = AlsConfig {
        dim: 16,
        iterations: 2,
        ..AlsConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let points: Vec<f64> = (0..3000 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dense = DMatrix::from_fn(b.catalog.len(), 32, |_, _| rng.random_range(-1.0..1.0));
    let queries: Vec<Vec<f64>> = (0..64).map(|i| tracks.row(i * 7).to_vec()).collect();
    let popular = PopularityList::from_log(&b.log, &b.catalog, &b.universe.warm);
    let cold = b.cold_users(Split::Test);
    let recs: Vec<_> = cold
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            recommend_full_personalized(u, tracks.row(i % tracks.len()), tracks, &popular, 50).unwrap()
        })
        .collect();
    let truth = b.evaluation_truth(&cold);

    let mut g = c.benchmark_group("parallel");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("als-2-iterations", name), |bench| {
            bench.iter(|| pool.install(|| train_als(&affinity, &als).unwrap()))
        });
        g.bench_function(BenchmarkId::new("kmeans-3000x32-k50", name), |bench| {
            let cfg = KMeansConfig {
                k: 50,
                max_iter: 10,
                ..KMeansConfig::default()
            };
            bench.iter(|| pool.install(|| kmeans(&points, 32, &cfg).unwrap()))
        });
        g.bench_function(BenchmarkId::new("sparse-times-dense", name), |bench| {
            bench.iter(|| pool.install(|| affinity.scores.mul_dense(&dense)))
        });
        g.bench_function(BenchmarkId::new("top-k-64-queries", name), |bench| {
            bench.iter(|| {
                pool.install(|| {
                    queries
                        .iter()
                        .map(|q| top_k_by_similarity(q, tracks, 50, &HashSet::new()).len())
                        .sum::<usize>()
                })
            })
        });
        g.bench_function(BenchmarkId::new("score-recommendations", name), |bench| {
            bench.iter(|| pool.install(|| score_recommendations(&recs, &truth, 50)))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
