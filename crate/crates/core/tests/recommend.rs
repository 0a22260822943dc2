use std::collections::BTreeSet;

use coldstart_core::dataset::{generate_synthetic, SyntheticConfig, PLANTED_SPACE};
use coldstart_core::recommend::{
    baseline_popularity, baseline_registration_streams, recommend_full_personalized,
    recommend_semi_personalized, PopularityList,
};
use coldstart_core::segmentation::{AssignMetric, KMeansConfig, PopularityMeasure, Segmentation};
use coldstart_core::trainers::{warm_user_table, HistoryWeighting};
use coldstart_core::{EmbeddingTable, Signal, TrackId, UserId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every track scored by an independent cosine, sorted by score then id.
fn brute_force(query: &[f64], table: &EmbeddingTable, k: usize) -> Vec<(TrackId, f64)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut all: Vec<(TrackId, f64)> = table
        .iter()
        .map(|(id, row)| {
            let dot: f64 = query.iter().zip(row).map(|(a, b)| a * b).sum();
            (TrackId(id), dot / (norm(query) * norm(row)))
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn random_table(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EmbeddingTable {
    EmbeddingTable::from_rows(
        dim,
        (0..n as u64).map(|i| (i * 3 + 1, (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>())),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn full_personalization_matches_brute_force(seed in 0u64..10_000, k in 1usize..40, dim in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = random_table(&mut rng, 60, dim);
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        prop_assume!(q.iter().any(|x| *x != 0.0));
        let popular = PopularityList::from_tracks(vec![]);
        let rec = recommend_full_personalized(UserId(1), &q, &table, &popular, k).unwrap();
        let oracle = brute_force(&q, &table, k);
        prop_assert_eq!(rec.tracks(), oracle.iter().map(|x| x.0).collect::<Vec<_>>());
        for ((_, a), (_, b)) in rec.items.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        rec.check(k, 60).unwrap();
    }
}

#[test]
fn null_vector_gets_popularity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let table = random_table(&mut rng, 10, 3);
    let popular = PopularityList::from_tracks((1..=10).map(TrackId).collect());
    let rec = recommend_full_personalized(UserId(1), &[0.0; 3], &table, &popular, 4).unwrap();
    assert_eq!(rec.tracks(), baseline_popularity(UserId(1), &popular, 4).tracks());
    assert!(recommend_full_personalized(UserId(1), &[1.0; 2], &table, &popular, 4).is_err());
}

struct World {
    data: coldstart_core::dataset::SyntheticDataset,
    warm: EmbeddingTable,
    popular: PopularityList,
}

fn world() -> World {
    let data = generate_synthetic(&SyntheticConfig {
        tracks: 300,
        warm_users: 400,
        cold_users: 100,
        artists_per_genre: 5,
        playlists_per_genre: 3,
        playlist_len: 10,
        dim: 8,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let b = &data.bundle;
    let tracks = &b.space(PLANTED_SPACE).unwrap().tracks;
    let (warm, _) = warm_user_table(&b.warm_users(), &b.log, tracks, HistoryWeighting::StreamCount).unwrap();
    let popular = PopularityList::from_log(&b.log, &b.catalog, &b.universe.warm);
    World { data, warm, popular }
}

#[test]
fn semi_personalization_serves_the_nearest_segment_list() {
    let w = world();
    let b = &w.data.bundle;
    let seg = Segmentation::cluster(
        &w.warm,
        AssignMetric::Euclidean,
        &KMeansConfig {
            k: 12,
            seed: 3,
            ..KMeansConfig::default()
        },
    )
    .unwrap()
    .with_top_items(&b.log, &b.catalog, 50, PopularityMeasure::DistinctListeners);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..200 {
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-0.5..0.5)).collect();
        let nearest = (0..seg.k())
            .min_by(|&a, &c| {
                let d = |s: usize| -> f64 {
                    seg.centroids.row(s).iter().zip(&v).map(|(x, y)| (x - y) * (x - y)).sum()
                };
                d(a).total_cmp(&d(c)).then(a.cmp(&c))
            })
            .unwrap();
        let rec = recommend_semi_personalized(UserId(i), &v, &seg, &w.popular, 50);
        assert_eq!(rec.segment, Some(nearest));
        assert_eq!(rec.tracks(), w.popular.pad(&seg.top_items[nearest], 50));
        rec.check(50, b.catalog.len()).unwrap();
    }
}

#[test]
fn segment_lists_count_distinct_member_listeners() {
    let w = world();
    let b = &w.data.bundle;
    let seg = Segmentation::cluster(
        &w.warm,
        AssignMetric::Euclidean,
        &KMeansConfig {
            k: 5,
            ..KMeansConfig::default()
        },
    )
    .unwrap()
    .with_top_items(&b.log, &b.catalog, 20, PopularityMeasure::DistinctListeners);
    for s in 0..seg.k() {
        let members = seg.members(s);
        let listeners = |t: TrackId| members.iter().filter(|u| b.log.stream_counts(**u).contains_key(&t)).count();
        let list = &seg.top_items[s];
        for pair in list.windows(2) {
            assert!(listeners(pair[0]) >= listeners(pair[1]));
        }
        let best_outside = b
            .catalog
            .track_ids()
            .filter(|t| !list.contains(t))
            .map(listeners)
            .max()
            .unwrap_or(0);
        assert!(listeners(*list.last().unwrap()) >= best_outside);
    }
}

#[test]
fn one_segment_equals_popularity() {
    let w = world();
    let b = &w.data.bundle;
    let seg = Segmentation::cluster(
        &w.warm,
        AssignMetric::Euclidean,
        &KMeansConfig {
            k: 1,
            ..KMeansConfig::default()
        },
    )
    .unwrap()
    .with_top_items(&b.log, &b.catalog, 50, PopularityMeasure::DistinctListeners);
    for u in b.cold_users(coldstart_core::Split::Test) {
        let semi = recommend_semi_personalized(u, &[0.1; 8], &seg, &w.popular, 50);
        assert_eq!(semi.tracks(), baseline_popularity(u, &w.popular, 50).tracks());
    }
}

#[test]
fn registration_streams_average_with_multiplicity() {
    let w = world();
    let b = &w.data.bundle;
    let tracks = &b.space(PLANTED_SPACE).unwrap().tracks;
    let mut served = 0;
    for u in b.cold_users(coldstart_core::Split::Test) {
        let events = b.log.for_user(u);
        let streamed: Vec<TrackId> = events
            .iter()
            .filter(|e| e.signal == Signal::Stream)
            .map(|e| TrackId(e.entity))
            .collect();
        let rec = baseline_registration_streams(u, events, tracks, &w.popular, 30);
        if streamed.is_empty() {
            assert_eq!(rec.tracks(), w.popular.top(30).to_vec());
            continue;
        }
        served += 1;
        let mut mean = vec![0.0; 8];
        for t in &streamed {
            for (m, x) in mean.iter_mut().zip(tracks.get(t.0).unwrap()) {
                *m += x / streamed.len() as f64;
            }
        }
        let oracle: Vec<TrackId> = brute_force(&mean, tracks, 30).into_iter().map(|x| x.0).collect();
        assert_eq!(rec.tracks(), oracle);
    }
    assert!(served > 20);
}

#[test]
fn popularity_list_covers_catalog() {
    let w = world();
    let b = &w.data.bundle;
    let all: BTreeSet<TrackId> = w.popular.tracks().iter().copied().collect();
    assert_eq!(all.len(), b.catalog.len());
    assert_eq!(w.popular.tracks().len(), b.catalog.len());
    let rec = baseline_popularity(UserId(0), &w.popular, 10_000);
    rec.check(10_000, b.catalog.len()).unwrap();
}
