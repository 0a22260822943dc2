use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use coldstart_core::dataset::{SyntheticConfig, PLANTED_SPACE};
use coldstart_core::pipeline::PipelineConfig;
use coldstart_core::recommend::Strategy;
use coldstart_core::regressor::TrainConfig;
use coldstart_core::stages::{self, Workspace};
use coldstart_core::{Error, Split};

fn synthetic() -> SyntheticConfig {
    SyntheticConfig {
        tracks: 200,
        warm_users: 300,
        cold_users: 100,
        artists_per_genre: 5,
        playlists_per_genre: 3,
        playlist_len: 10,
        dim: 8,
        ..SyntheticConfig::default()
    }
}

fn pipeline() -> PipelineConfig {
    PipelineConfig {
        space: PLANTED_SPACE.into(),
        segments: 8,
        feature_segments: 8,
        hidden: vec![32],
        top_k: 20,
        train: TrainConfig {
            epochs: 3,
            batch_size: 64,
            learning_rate: 0.01,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn run_all(ws: &Workspace, cfg: &PipelineConfig) -> String {
    stages::gen_data(ws, &synthetic()).unwrap();
    stages::train_embeddings(ws, cfg).unwrap();
    stages::build_features(ws, cfg).unwrap();
    stages::run_segment(ws, cfg).unwrap();
    stages::train_regressor(ws, cfg).unwrap();
    stages::recommend(ws, cfg, &Strategy::ALL, Split::Test).unwrap();
    stages::evaluate(ws, cfg, &Strategy::ALL, 10, Split::Test, None).unwrap();
    stages::report(ws).unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn chain_runs_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = pipeline();
    let table = run_all(&Workspace::new(a.path(), None), &cfg);
    assert_eq!(table.lines().count(), 1 + Strategy::ALL.len(), "{table}");
    assert!(table.contains("Semi-Personalization"), "{table}");
    run_all(&Workspace::new(b.path(), None), &cfg);
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs between runs");
    }
    assert!(fa.contains_key("report/table.txt"));
    assert!(fa.contains_key("recommendations/semi/recommendations.tsv"));
}

#[test]
fn missing_upstream_names_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path(), None);
    let cfg = pipeline();
    match stages::train_embeddings(&ws, &cfg) {
        Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, "gen-data"),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
    stages::gen_data(&ws, &synthetic()).unwrap();
    let err = stages::build_features(&ws, &cfg).unwrap_err();
    assert!(err.to_string().contains("coldstart train-embeddings"), "{err}");
    stages::train_embeddings(&ws, &cfg).unwrap();
    stages::build_features(&ws, &cfg).unwrap();
    match stages::recommend(&ws, &cfg, &[Strategy::SemiPersonalized], Split::Test) {
        Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, "segment"),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
    // popularity needs nothing beyond features
    stages::recommend(&ws, &cfg, &[Strategy::Popularity], Split::Test).unwrap();
}

#[test]
fn stale_and_mismatched_lineage_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path(), None);
    let cfg = pipeline();
    run_all(&ws, &cfg);

    let reseeded = PipelineConfig { seed: 7, ..cfg.clone() };
    assert!(matches!(
        stages::evaluate(&ws, &reseeded, &[Strategy::Popularity], 10, Split::Test, None),
        Err(Error::Lineage(_))
    ));

    // regenerated data invalidates everything built from it
    stages::gen_data(&ws, &SyntheticConfig { seed: 1, ..synthetic() }).unwrap();
    let err = stages::evaluate(&ws, &cfg, &[Strategy::Popularity], 10, Split::Test, None).unwrap_err();
    assert!(matches!(err, Error::Lineage(_)), "{err}");
    assert!(err.to_string().contains("older data"), "{err}");

    // a rebuilt upstream artifact invalidates its consumers
    stages::gen_data(&ws, &synthetic()).unwrap();
    stages::evaluate(&ws, &cfg, &[Strategy::Popularity], 10, Split::Test, None).unwrap();
    stages::train_embeddings(&ws, &PipelineConfig { seed: 3, ..cfg.clone() }).unwrap();
    let err = stages::recommend(&ws, &cfg, &[Strategy::Popularity], Split::Test).unwrap_err();
    assert!(matches!(err, Error::Lineage(_)), "{err}");

    // an edited output file is caught by its fingerprint
    stages::train_embeddings(&ws, &cfg).unwrap();
    stages::build_features(&ws, &cfg).unwrap();
    fs::write(dir.path().join("features/popular.txt"), "1\n").unwrap();
    assert!(matches!(
        stages::recommend(&ws, &cfg, &[Strategy::Popularity], Split::Test),
        Err(Error::Validation(_))
    ));
}

#[test]
fn cutoff_beyond_list_length_needs_longer_lists() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path(), None);
    let cfg = pipeline();
    run_all(&ws, &cfg);
    let err = stages::evaluate(&ws, &cfg, &[Strategy::Popularity], 25, Split::Test, None).unwrap_err();
    assert!(err.to_string().contains("--top-k 25"), "{err}");
    // in-memory mode rebuilds lists of the requested length
    let s = stages::evaluate(&ws, &cfg, &[Strategy::Popularity, Strategy::SemiPersonalized], 25, Split::Test, Some(2)).unwrap();
    assert_eq!(s.seeds, vec![0, 1]);
    assert!(s.reports.iter().all(|r| r.k == 25 && r.runs.len() == 2));
}

#[test]
fn file_scores_match_in_memory_scores() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path(), None);
    let cfg = pipeline();
    run_all(&ws, &cfg);
    let strategies = [Strategy::Popularity, Strategy::SemiPersonalized, Strategy::FullPersonalized];
    let from_files = stages::evaluate(&ws, &cfg, &strategies, 20, Split::Test, None).unwrap();
    let in_memory = stages::evaluate(&ws, &cfg, &strategies, 20, Split::Test, Some(1)).unwrap();
    for (f, m) in from_files.reports.iter().zip(&in_memory.reports) {
        assert_eq!(f.strategy, m.strategy);
        assert_eq!(f.per_user, m.per_user, "{}", f.strategy);
        assert_eq!(f.precision, m.precision);
    }
}
