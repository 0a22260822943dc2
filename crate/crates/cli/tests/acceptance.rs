//! Acceptance checks. Runs without the libtest harness so each criterion prints one
//! ordered PASS/FAIL/SKIP line; the process exits non-zero if any criterion fails.
//!
//! `COLDSTART_DEEZER_BUNDLE` points criterion 6 at a mapped copy of the public Deezer
//! release; without it that criterion is skipped.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use coldstart_core::dataset::{generate_synthetic, load_bundle, DatasetBundle, SyntheticConfig, PLANTED_SPACE};
use coldstart_core::eval::{breakdown_by_interaction, ndcg_at_k, precision_at_k, recall_at_k, Bin, EvalReport};
use coldstart_core::interactions::Signal;
use coldstart_core::pipeline::{run_offline_experiment, PipelineConfig};
use coldstart_core::recommend::{recommend_full_personalized, recommend_semi_personalized, Strategy};
use coldstart_core::regressor::{BnPlacement, RegressorModel, RegressorSpec, TrainConfig};
use coldstart_core::segmentation::{kmeans, KMeansConfig};
use coldstart_core::sparse::CsrMatrix;
use coldstart_core::stages::{self, Expect, Workspace};
use coldstart_core::trainers::{
    build_sppmi, train_als, train_svd_embeddings, AffinityMatrix, AlsConfig, CooccurrenceCounts, SvdConfig,
};
use coldstart_core::{Split, TrackId, UserId};
use coldstart_serve::{AppState, RecommendResponse, Snapshot};
use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const METRIC_TOL: f64 = 1e-12;
const WORKED_NDCG: f64 = 0.6309;
const GRAD_TOL: f64 = 1e-4;
const RANK_ONE_TOL: f64 = 1e-3;
const GRAM_TOL: f64 = 1e-6;
const SEMI_OVER_POPULARITY: f64 = 1.2;
const DEEZER_SEMI_PRECISION: f64 = 22.75;
const DEEZER_TOL: f64 = 2.0;
const HTTP_REQUESTS: usize = 200;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

type Check = fn() -> Result<Verdict, String>;

fn main() -> ExitCode {
    let checks: [(u8, &str, Option<u64>, Check); 8] = [
        (1, "metric oracles", Some(10), metric_oracles),
        (2, "gradient check", Some(30), gradient_check),
        (3, "factorization", None, factorization),
        (4, "clustering", None, clustering),
        (5, "synthetic experiment", Some(600), synthetic_experiment),
        (6, "deezer reproduction", None, deezer),
        (7, "service parity and reload", None, service),
        (8, "cli reproducibility", None, cli_reproducible),
    ];
    let only: Option<Vec<u8>> = std::env::var("COLDSTART_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|c| c.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, budget, check) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let v = check().unwrap_or_else(|e| Verdict::Fail(format!("error: {e}")));
        let secs = t.elapsed().as_secs_f64();
        let v = match (v, budget) {
            (Verdict::Pass(d), Some(b)) if secs >= b as f64 => Verdict::Fail(format!("{d}; over the {b} s budget")),
            (v, _) => v,
        };
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {n} {name}: {detail} [{secs:.1} s]");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

// 1

/// Straight-line metrics over an explicit relevance vector.
fn metric_reference(rec: &[u64], truth: &[u64], k: usize) -> (f64, Option<f64>, Option<f64>) {
    let rel: Vec<f64> = (0..k)
        .map(|i| rec.get(i).map_or(0.0, |t| if truth.contains(t) { 1.0 } else { 0.0 }))
        .collect();
    let hits: f64 = rel.iter().sum();
    let precision = if k == 0 { 0.0 } else { hits / k as f64 };
    if truth.is_empty() {
        return (precision, None, None);
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = rel.iter().enumerate().map(|(i, r)| r * discount(i)).sum();
    let idcg: f64 = (0..k.min(truth.len())).map(discount).sum();
    let ndcg = if idcg == 0.0 { 0.0 } else { dcg / idcg };
    (precision, Some(hits / truth.len() as f64), Some(ndcg))
}

fn gap(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    }
}

fn metric_oracles() -> Result<Verdict, String> {
    let ids = |v: &[u64]| v.iter().map(|&i| TrackId(i)).collect::<Vec<_>>();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut pool: Vec<u64> = (0..rng.random_range(1..200)).collect();
        pool.shuffle(&mut rng);
        let rec = pool[..rng.random_range(0..=pool.len().min(60))].to_vec();
        pool.shuffle(&mut rng);
        let truth = pool[..rng.random_range(0..=pool.len().min(80))].to_vec();
        let k = rng.random_range(0..=70);
        let (p, r, n) = metric_reference(&rec, &truth, k);
        let set: HashSet<TrackId> = ids(&truth).into_iter().collect();
        let rec = ids(&rec);
        worst = worst
            .max((precision_at_k(&rec, &set, k) - p).abs())
            .max(gap(recall_at_k(&rec, &set, k), r))
            .max(gap(ndcg_at_k(&rec, &set, k), n));
    }
    let worked = ndcg_at_k(&ids(&[1, 2, 3]), &[TrackId(2)].into_iter().collect(), 3).unwrap_or(f64::NAN);
    let exact = 1.0 / 3f64.log2();
    Ok(verdict(
        worst < METRIC_TOL && (worked - exact).abs() < METRIC_TOL && (worked - WORKED_NDCG).abs() < 5e-5,
        format!("1000 instances, worst deviation {worst:.1e}; worked ndcg@3 {worked:.6}"),
    ))
}

// 2

fn gradient_check() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for trial in 0..5u64 {
        let depth = rng.random_range(1..=3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=8)).collect();
        let mut spec = RegressorSpec::new(rng.random_range(2..=8), hidden, rng.random_range(1..=5));
        spec.batch_norm = (0..depth).map(|_| rng.random_bool(0.7)).collect();
        spec.placement = if rng.random_bool(0.5) {
            BnPlacement::AfterActivation
        } else {
            BnPlacement::BeforeActivation
        };
        let batch = rng.random_range(3..=10);
        let (input, output) = (spec.input_dim, spec.output_dim);
        let mut model = RegressorModel::init(spec, trial).map_err(|e| e.to_string())?;
        let mut p = model.flat_params();
        for v in p.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        model.set_flat_params(&p);
        let x = DMatrix::from_fn(input, batch, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(output, batch, |_, _| rng.random_range(-1.0..1.0));
        let (_, analytic) = model.batch_loss_gradient(&x, &y);
        let h = 1e-5;
        for i in 0..p.len() {
            let mut m = model.clone();
            let mut q = p.clone();
            q[i] = p[i] + h;
            m.set_flat_params(&q);
            let up = m.batch_loss(&x, &y);
            q[i] = p[i] - h;
            m.set_flat_params(&q);
            let numeric = (up - m.batch_loss(&x, &y)) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        params += p.len();
    }
    Ok(verdict(
        worst < GRAD_TOL,
        format!("5 architectures, {params} parameters, max relative error {worst:.1e}"),
    ))
}

// 3

fn affinity(scores: &DMatrix<f64>) -> AffinityMatrix {
    AffinityMatrix {
        users: (0..scores.nrows() as u64).map(UserId).collect(),
        tracks: (0..scores.ncols() as u64).map(TrackId).collect(),
        scores: CsrMatrix::from_dense(scores),
    }
}

/// Largest rise between consecutive half-steps, relative to the starting objective.
fn worst_rise(objective: &[f64]) -> f64 {
    objective
        .windows(2)
        .map(|w| (w[1] - w[0]) / objective[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

fn random_sppmi(seed: u64, n: usize) -> Result<(CsrMatrix, Vec<TrackId>), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dense = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            if rng.random_bool(0.3) {
                let c = rng.random_range(1..20) as f64;
                dense[(i, j)] = c;
                dense[(j, i)] = c;
            }
        }
    }
    let tracks: Vec<TrackId> = (0..n as u64).map(TrackId).collect();
    let counts = CooccurrenceCounts::from_counts(tracks.clone(), CsrMatrix::from_dense(&dense)).map_err(|e| e.to_string())?;
    Ok((build_sppmi(&counts, 1.0).map_err(|e| e.to_string())?, tracks))
}

/// Gram matrix of the rank-d truncation from a dense decomposition.
fn dense_gram(s: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let svd = s.clone().svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let u = svd.u.expect("u requested");
    let mut gram = DMatrix::zeros(s.nrows(), s.nrows());
    for &k in order.iter().take(d) {
        let col = u.column(k);
        gram += col * col.transpose() * svd.singular_values[k];
    }
    gram
}

fn factorization() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<bool> = (0..20).map(|i| i % 3 != 0).collect();
    let cols: Vec<bool> = (0..20).map(|j| j % 4 != 1).collect();
    let planted = DMatrix::from_fn(20, 20, |i, j| {
        if rows[i] && cols[j] {
            rng.random_range(1.0..5.0)
        } else {
            0.0
        }
    });
    let cfg = AlsConfig {
        dim: 1,
        lambda: 1e-6,
        alpha: 1e4,
        iterations: 60,
        seed: 3,
        ..AlsConfig::default()
    };
    let fit = train_als(&affinity(&planted), &cfg).map_err(|e| e.to_string())?;
    let mut rise = worst_rise(&fit.objective);
    let mut recovery: f64 = 0.0;
    for i in 0..20 {
        for j in 0..20 {
            let p = if planted[(i, j)] > 0.0 { 1.0 } else { 0.0 };
            let x = fit.users.get(i as u64).ok_or("missing user row")?[0];
            let y = fit.tracks.get(j as u64).ok_or("missing track row")?[0];
            recovery = recovery.max((x * y - p).abs());
        }
    }
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let scores = DMatrix::from_fn(30, 25, |_, _| {
            if rng.random_bool(0.2) {
                rng.random_range(1..6) as f64
            } else {
                0.0
            }
        });
        let cfg = AlsConfig {
            dim: 4,
            iterations: 10,
            seed,
            ..AlsConfig::default()
        };
        let fit = train_als(&affinity(&scores), &cfg).map_err(|e| e.to_string())?;
        rise = rise.max(worst_rise(&fit.objective));
    }

    let mut gram_gap: f64 = 0.0;
    for seed in 0..5 {
        let (s, tracks) = random_sppmi(seed, 30)?;
        let dense = s.to_dense();
        for d in [3, 8] {
            let emb = train_svd_embeddings(&s, &tracks, &SvdConfig { dim: d, seed, ..SvdConfig::default() })
                .map_err(|e| e.to_string())?;
            let e = DMatrix::from_row_slice(30, d, emb.as_flat());
            gram_gap = gram_gap.max((&e * e.transpose() - dense_gram(&dense, d)).norm());
        }
    }
    // rounding in the ridge solves, relative to the starting objective
    let monotone = rise <= 1e-12;
    Ok(verdict(
        monotone && recovery < RANK_ONE_TOL && gram_gap < GRAM_TOL,
        format!(
            "ALS worst half-step rise {rise:.1e} of start, rank-1 error {recovery:.1e}; SVD gram gap {gram_gap:.1e}"
        ),
    ))
}

// 4

fn within_cluster(points: &[f64], dim: usize, groups: &[usize], k: usize) -> f64 {
    let n = points.len() / dim;
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| groups[i] == c).collect();
        if members.is_empty() {
            return f64::INFINITY;
        }
        for j in 0..dim {
            let mean = members.iter().map(|&i| points[i * dim + j]).sum::<f64>() / members.len() as f64;
            total += members.iter().map(|&i| (points[i * dim + j] - mean).powi(2)).sum::<f64>();
        }
    }
    total
}

/// Best objective over every assignment of points to k nonempty clusters.
fn exhaustive_optimum(points: &[f64], dim: usize, k: usize) -> f64 {
    let n = points.len() / dim;
    let mut best = f64::INFINITY;
    let mut groups = vec![0usize; n];
    loop {
        best = best.min(within_cluster(points, dim, &groups, k));
        let mut i = 0;
        while i < n {
            groups[i] += 1;
            if groups[i] < k {
                break;
            }
            groups[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

fn kmeans_cfg(k: usize, seed: u64) -> KMeansConfig {
    KMeansConfig {
        k,
        seed,
        max_iter: 200,
        tol: 0.0,
    }
}

fn clustering() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rises = 0;
    for seed in 0..200 {
        let n = rng.random_range(4..60);
        let pts: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-20i32..20) as f64 * 0.5).collect();
        let k = rng.random_range(1..=6usize).min(n / 2);
        let fit = kmeans(&pts, 2, &kmeans_cfg(k, seed)).map_err(|e| e.to_string())?;
        rises += fit
            .objective
            .windows(2)
            .filter(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-12)
            .count();
    }

    let pairs = [0.0, 1.0, 9.0, 10.0];
    let optimum = exhaustive_optimum(&pairs, 1, 2);
    let mut pairs_ok = optimum == 1.0;
    for seed in 0..10 {
        let fit = kmeans(&pairs, 1, &kmeans_cfg(2, seed)).map_err(|e| e.to_string())?;
        let mut c = fit.centroids.clone();
        c.sort_by(f64::total_cmp);
        pairs_ok &= c == [0.5, 9.5] && fit.objective.last() == Some(&optimum);
    }

    let mut heavy = vec![3.0; 40];
    heavy.extend([0.0, 0.0, 7.0, 7.0, 7.0, 11.0]);
    let mut empty = 0;
    for seed in 0..100 {
        let fit = kmeans(&heavy, 1, &kmeans_cfg(5, seed)).map_err(|e| e.to_string())?;
        empty += fit.cluster_sizes().iter().filter(|&&s| s == 0).count();
    }
    Ok(verdict(
        rises == 0 && pairs_ok && empty == 0,
        format!(
            "{rises} objective rises over 200 fits; {{0,1,9,10}} centroids {} (oracle optimum {optimum}); {empty} empty clusters over 100 seeds",
            if pairs_ok { "{0.5, 9.5}" } else { "wrong" }
        ),
    ))
}

// 5

fn report(out: &[EvalReport], s: Strategy) -> Result<&EvalReport, String> {
    out.iter().find(|r| r.strategy == s).ok_or_else(|| format!("no report for {s}"))
}

fn registration_events(bundle: &DatasetBundle, user: UserId) -> usize {
    bundle
        .universe
        .profile(user)
        .map_or(0, |p| bundle.log.on_day(user, p.registration_day).len())
}

fn synthetic_experiment() -> Result<Verdict, String> {
    let synth = SyntheticConfig::default();
    let data = generate_synthetic(&synth).map_err(|e| e.to_string())?;
    let bundle = &data.bundle;
    let cfg = PipelineConfig {
        space: PLANTED_SPACE.into(),
        segments: 50,
        feature_segments: 50,
        train: TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 128,
            epochs: 20,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    };
    let seeds: Vec<u64> = (0..10).collect();
    let out = run_offline_experiment(bundle, &cfg, &Strategy::ALL, &seeds, Split::Test).map_err(|e| e.to_string())?;
    let semi = report(&out.reports, Strategy::SemiPersonalized)?;
    let full = report(&out.reports, Strategy::FullPersonalized)?;
    let pop = report(&out.reports, Strategy::Popularity)?;
    let lift = semi.precision.mean / pop.precision.mean;

    let quiet = |r: &EvalReport| {
        let v: Vec<f64> = r
            .per_user
            .iter()
            .filter(|s| registration_events(bundle, s.user) <= 2)
            .map(|s| s.precision)
            .collect();
        (v.iter().sum::<f64>() / v.len().max(1) as f64, v.len())
    };
    let ((semi_quiet, n_quiet), (full_quiet, _)) = (quiet(semi), quiet(full));

    let bins = [Bin { lo: 0, hi: Some(0) }, Bin { lo: 1, hi: None }];
    let rows = breakdown_by_interaction(&semi.per_user, &bundle.log, &bundle.universe, &bins);
    let stream: BTreeMap<usize, Option<f64>> = rows
        .iter()
        .filter(|r| r.signal == Signal::Stream)
        .map(|r| (r.bin.lo, r.mean_precision))
        .collect();
    let (none, some) = match (stream.get(&0).copied().flatten(), stream.get(&1).copied().flatten()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Ok(Verdict::Fail("a stream bin is empty".into())),
    };
    Ok(verdict(
        lift >= SEMI_OVER_POPULARITY && semi_quiet >= full_quiet && some > none,
        format!(
            "precision@50 semi {:.4} vs popularity {:.4} (x{lift:.2}); <=2 events ({n_quiet} users) semi {semi_quiet:.4} vs full {full_quiet:.4}; streams 0 {none:.4} vs 1+ {some:.4}",
            semi.precision.mean, pop.precision.mean
        ),
    ))
}

// 6

fn deezer() -> Result<Verdict, String> {
    let Some(dir) = std::env::var_os("COLDSTART_DEEZER_BUNDLE").map(PathBuf::from) else {
        return Ok(Verdict::Skip("COLDSTART_DEEZER_BUNDLE not set".into()));
    };
    if !dir.is_dir() {
        return Ok(Verdict::Skip(format!("{} not found", dir.display())));
    }
    let seeds: u64 = std::env::var("COLDSTART_DEEZER_SEEDS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let bundle = load_bundle(&dir).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig {
        space: "tt-svd".into(),
        ..PipelineConfig::default()
    };
    let strategies = [
        Strategy::SemiPersonalized,
        Strategy::FullPersonalized,
        Strategy::RegistrationStreams,
        Strategy::Popularity,
    ];
    let seeds: Vec<u64> = (0..seeds).collect();
    let out = run_offline_experiment(&bundle, &cfg, &strategies, &seeds, Split::Test).map_err(|e| e.to_string())?;
    let ndcg: Vec<f64> = strategies
        .iter()
        .map(|s| report(&out.reports, *s).map(|r| r.ndcg.mean))
        .collect::<Result<_, _>>()?;
    let precision = 100.0 * report(&out.reports, Strategy::SemiPersonalized)?.precision.mean;
    let ordered = ndcg.windows(2).all(|w| w[0] > w[1]);
    Ok(verdict(
        (precision - DEEZER_SEMI_PRECISION).abs() <= DEEZER_TOL && ordered,
        format!("semi precision@50 {precision:.2}% (target {DEEZER_SEMI_PRECISION} +- {DEEZER_TOL}); ndcg semi, full, reg-streams, popularity {ndcg:.4?}"),
    ))
}

// 7

fn service_pipeline(seed: u64) -> PipelineConfig {
    PipelineConfig {
        space: PLANTED_SPACE.into(),
        seed,
        segments: 12,
        feature_segments: 12,
        hidden: vec![64],
        train: TrainConfig {
            epochs: 5,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn build_workspace(dir: &Path, seed: u64) -> coldstart_core::Result<()> {
    let ws = Workspace::new(dir, None);
    let cfg = service_pipeline(seed);
    stages::gen_data(
        &ws,
        &SyntheticConfig {
            tracks: 500,
            warm_users: 800,
            cold_users: 300,
            dim: 16,
            ..SyntheticConfig::default()
        },
    )?;
    stages::train_embeddings(&ws, &cfg)?;
    stages::build_features(&ws, &cfg)?;
    stages::run_segment(&ws, &cfg)?;
    stages::train_regressor(&ws, &cfg)?;
    stages::recommend(&ws, &cfg, &[Strategy::SemiPersonalized, Strategy::FullPersonalized], Split::Test)?;
    Ok(())
}

/// A request carrying a cold user's registration-day record, in log order.
fn request(bundle: &DatasetBundle, user: UserId, strategy: Strategy, k: usize) -> Value {
    let Some(profile) = bundle.universe.profile(user).cloned() else {
        return json!({});
    };
    let events: Vec<Value> = bundle
        .log
        .on_day(user, profile.registration_day)
        .iter()
        .map(|e| json!({"day": e.day, "signal": e.signal.as_str(), "kind": e.kind.as_str(), "entity_id": e.entity}))
        .collect();
    let mut body = json!({
        "user_id": user.0,
        "registration_day": profile.registration_day,
        "events": events,
        "strategy": strategy.to_string(),
        "k": k,
    });
    if let Some(c) = profile.country {
        body["country"] = json!(c);
    }
    if let Some(a) = profile.age {
        body["age"] = json!(a);
    }
    body
}

/// Offline artifacts of one workspace and the response bytes they imply.
struct Offline {
    bundle: DatasetBundle,
    snapshot: Snapshot,
    predicted: coldstart_core::EmbeddingTable,
    files: BTreeMap<(Strategy, UserId), Vec<u64>>,
}

impl Offline {
    fn load(dir: &Path) -> Result<Offline, String> {
        let ws = Workspace::new(dir, None);
        let (bundle, _) = stages::load_data(&ws).map_err(|e| e.to_string())?;
        let predicted = stages::load_predicted(&ws, Expect::default()).map_err(|e| e.to_string())?;
        let mut files = BTreeMap::new();
        for s in [Strategy::SemiPersonalized, Strategy::FullPersonalized] {
            let (recs, _) = stages::load_recommendations(&ws, s, Expect::default()).map_err(|e| e.to_string())?;
            for r in recs {
                files.insert((s, r.user), r.items.iter().map(|(t, _)| t.0).collect());
            }
        }
        let snapshot = Snapshot::load(dir).map_err(|e| e.to_string())?;
        Ok(Offline {
            bundle,
            snapshot,
            predicted,
            files,
        })
    }

    /// Expected body, from the stored cold-user predictions and the segment and
    /// popularity artifacts.
    fn expected(&self, user: UserId, strategy: Strategy, k: usize) -> Result<Vec<u8>, String> {
        let y = self.predicted.get(user.0).ok_or_else(|| format!("no prediction for {user}"))?;
        let snap = &self.snapshot;
        let rec = match strategy {
            Strategy::SemiPersonalized => recommend_semi_personalized(user, y, &snap.segmentation, &snap.popular, k),
            _ => recommend_full_personalized(user, y, snap.tracks(), &snap.popular, k).map_err(|e| e.to_string())?,
        };
        if let Some(listed) = self.files.get(&(strategy, user)) {
            let n = k.min(listed.len());
            if rec.items.iter().take(n).map(|(t, _)| t.0).ne(listed.iter().take(n).copied()) {
                return Err(format!("{strategy} list for {user} differs from the recommendation file"));
            }
        }
        serde_json::to_vec(&RecommendResponse::new(&rec, snap, Some(user.0))).map_err(|e| e.to_string())
    }
}

async fn post_bytes(client: &reqwest::Client, url: &str, body: &Value) -> Result<(u16, Vec<u8>), String> {
    let r = client.post(url).json(body).send().await.map_err(|e| e.to_string())?;
    let status = r.status().as_u16();
    Ok((status, r.bytes().await.map_err(|e| e.to_string())?.to_vec()))
}

fn service() -> Result<Verdict, String> {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    build_workspace(a.path(), 0).map_err(|e| e.to_string())?;
    build_workspace(b.path(), 1).map_err(|e| e.to_string())?;
    let oa = Arc::new(Offline::load(a.path())?);
    let ob = Arc::new(Offline::load(b.path())?);
    let users: Vec<UserId> = oa.predicted.ids().iter().map(|&u| UserId(u)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = Vec::with_capacity(HTTP_REQUESTS);
    for _ in 0..HTTP_REQUESTS {
        let user = *users.choose(&mut rng).ok_or("no cold users")?;
        let strategy = if rng.random_bool(0.5) {
            Strategy::SemiPersonalized
        } else {
            Strategy::FullPersonalized
        };
        let k = rng.random_range(1..=100);
        cases.push((request(&oa.bundle, user, strategy, k), oa.expected(user, strategy, k)?, ob.expected(user, strategy, k)?));
    }
    let cases = Arc::new(cases);

    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let (parity, stress) = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let base = format!("http://{}", listener.local_addr().map_err(|e| e.to_string())?);
        let state = Arc::new(AppState::with_snapshot(Snapshot::load(a.path()).map_err(|e| e.to_string())?));
        tokio::spawn(coldstart_serve::serve(listener, state, std::future::pending()));
        let client = reqwest::Client::new();
        let url = format!("{base}/v1/recommend");

        let mut identical = 0;
        for (body, expected, _) in cases.iter() {
            let (status, bytes) = post_bytes(&client, &url, body).await?;
            if status == 200 && &bytes == expected {
                identical += 1;
            }
        }

        let reloads = {
            let (client, base) = (client.clone(), base.clone());
            let dirs = [b.path().to_path_buf(), a.path().to_path_buf()];
            tokio::spawn(async move {
                let mut ok = 0;
                for i in 0..40 {
                    let dir = &dirs[i % 2];
                    let (status, _) = post_bytes(&client, &format!("{base}/admin/reload"), &json!({"dir": dir})).await?;
                    ok += usize::from(status == 200);
                    tokio::time::sleep(Duration::from_millis(5)).await;
                }
                Ok::<_, String>(ok)
            })
        };
        let mut clients = Vec::new();
        for c in 0..4 {
            let (client, url, cases) = (client.clone(), url.clone(), cases.clone());
            clients.push(tokio::spawn(async move {
                let (mut from_a, mut from_b, mut mixed) = (0, 0, 0);
                for i in 0..60 {
                    let (body, ea, eb) = &cases[(c * 60 + i) % cases.len()];
                    let (status, bytes) = post_bytes(&client, &url, body).await?;
                    match (status == 200 && &bytes == ea, status == 200 && &bytes == eb) {
                        (true, false) => from_a += 1,
                        (false, true) => from_b += 1,
                        _ => mixed += 1,
                    }
                }
                Ok::<_, String>((from_a, from_b, mixed))
            }));
        }
        let mut totals = (0, 0, 0);
        for h in clients {
            let (x, y, z) = h.await.map_err(|e| e.to_string())??;
            totals = (totals.0 + x, totals.1 + y, totals.2 + z);
        }
        let reloaded = reloads.await.map_err(|e| e.to_string())??;
        Ok::<_, String>((identical, (totals, reloaded)))
    })?;
    let ((from_a, from_b, mixed), reloaded) = stress;
    Ok(verdict(
        parity == HTTP_REQUESTS && mixed == 0 && reloaded == 40,
        format!(
            "{parity}/{HTTP_REQUESTS} responses byte-identical to offline; stress: {reloaded}/40 reloads, {from_a} + {from_b} consistent responses, {mixed} mixed"
        ),
    ))
}

// 8

const CLI_CONFIG: &str = r#"
space = "planted"
segments = 10
feature_segments = 10
hidden = [32]

[train]
epochs = 4
batch_size = 64
learning_rate = 0.01

[synthetic]
tracks = 300
warm_users = 400
cold_users = 150
dim = 8
"#;

fn tree(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).map_err(|e| e.to_string())?.display().to_string();
                out.insert(rel, std::fs::read(&p).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

/// Runs every subcommand into `root`; returns the concatenated stdout.
fn cli_run(root: &Path, config: &Path) -> Result<Vec<u8>, String> {
    let out = root.display().to_string();
    let config = config.display().to_string();
    let mut stdout = Vec::new();
    let stages = [
        "gen-data",
        "train-embeddings",
        "build-features",
        "segment",
        "train-regressor",
        "recommend",
        "evaluate",
    ];
    let mut commands: Vec<Vec<&str>> = stages.iter().map(|s| vec![*s, "--out", &out, "--config", &config]).collect();
    commands.push(vec!["report", "--out", &out]);
    for args in commands {
        let o = Command::new(env!("CARGO_BIN_EXE_coldstart"))
            .args(&args)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("coldstart {}: {}", args[0], String::from_utf8_lossy(&o.stderr)));
        }
        // paths differ between runs; keep what is printed after them
        let text = String::from_utf8_lossy(&o.stdout).replace(&out, "<out>");
        stdout.extend(text.into_bytes());
    }
    Ok(stdout)
}

fn cli_reproducible() -> Result<Verdict, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("pipeline.toml");
    std::fs::write(&config, CLI_CONFIG).map_err(|e| e.to_string())?;
    let (ra, rb) = (tmp.path().join("a"), tmp.path().join("b"));
    let (sa, sb) = (cli_run(&ra, &config)?, cli_run(&rb, &config)?);
    let (ta, tb) = (tree(&ra)?, tree(&rb)?);
    let differing: Vec<&String> = ta.iter().filter(|(k, v)| tb.get(*k) != Some(v)).map(|(k, _)| k).collect();
    let same_set = ta.len() == tb.len();
    Ok(verdict(
        same_set && differing.is_empty() && sa == sb && ta.contains_key("report/table.txt"),
        format!(
            "{} files compared, {} differ{}; reports {}",
            ta.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({differing:?})") },
            if sa == sb { "identical" } else { "differ" }
        ),
    ))
}
