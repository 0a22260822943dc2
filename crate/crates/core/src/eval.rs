//! Offline evaluation: ranking metrics, multi-seed aggregation, breakdowns by
//! registration-day activity and popularity histograms.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, UserUniverse};
use crate::error::{Error, Result};
use crate::ids::{TrackId, UserId};
use crate::interactions::{InteractionLog, Signal};
use crate::par;
use crate::recommend::{Recommendation, Strategy};

/// Tracks each cold user listened to after registration day.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub users: BTreeMap<UserId, BTreeSet<TrackId>>,
}

impl GroundTruth {
    pub fn new(users: BTreeMap<UserId, BTreeSet<TrackId>>) -> Self {
        GroundTruth { users }
    }

    pub fn get(&self, user: UserId) -> Option<&BTreeSet<TrackId>> {
        self.users.get(&user)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Drops tracks outside the catalog, then users with fewer than `min_listens` tracks.
    pub fn restricted(&self, catalog: &Catalog, min_listens: usize) -> GroundTruth {
        let users = self
            .users
            .iter()
            .map(|(u, t)| {
                let kept: BTreeSet<TrackId> =
                    t.iter().copied().filter(|t| catalog.contains(*t)).collect();
                (*u, kept)
            })
            .filter(|(_, t)| t.len() >= min_listens)
            .collect();
        GroundTruth { users }
    }
}

fn hits(rec: &[TrackId], truth: &HashSet<TrackId>, k: usize) -> usize {
    rec.iter().take(k).filter(|t| truth.contains(t)).count()
}

/// `|top-k ∩ truth| / k`; zero for `k = 0`.
pub fn precision_at_k(rec: &[TrackId], truth: &HashSet<TrackId>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    hits(rec, truth, k) as f64 / k as f64
}

/// `|top-k ∩ truth| / |truth|`; `None` when the truth set is empty.
pub fn recall_at_k(rec: &[TrackId], truth: &HashSet<TrackId>, k: usize) -> Option<f64> {
    if truth.is_empty() {
        return None;
    }
    Some(hits(rec, truth, k) as f64 / truth.len() as f64)
}

/// Binary-relevance NDCG with a log2 discount; `None` when the truth set is empty.
pub fn ndcg_at_k(rec: &[TrackId], truth: &HashSet<TrackId>, k: usize) -> Option<f64> {
    if truth.is_empty() {
        return None;
    }
    let ideal: f64 = (0..k.min(truth.len())).map(discount).sum();
    if ideal == 0.0 {
        return Some(0.0);
    }
    let dcg: f64 = rec
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, t)| truth.contains(t))
        .map(|(i, _)| discount(i))
        .sum();
    Some(dcg / ideal)
}

fn discount(position: usize) -> f64 {
    1.0 / ((position + 2) as f64).log2()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserScore {
    pub user: UserId,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

/// Metrics for every recommendation whose user has a non-empty truth set; the second
/// value counts users skipped for lacking one.
pub fn score_recommendations(
    recs: &[Recommendation],
    truth: &GroundTruth,
    k: usize,
) -> (Vec<UserScore>, usize) {
    let scored = par::map_slice(recs, |r| {
        let t: HashSet<TrackId> = truth.get(r.user)?.iter().copied().collect();
        let tracks = r.tracks();
        Some(UserScore {
            user: r.user,
            precision: precision_at_k(&tracks, &t, k),
            recall: recall_at_k(&tracks, &t, k)?,
            ndcg: ndcg_at_k(&tracks, &t, k)?,
        })
    });
    let skipped = scored.iter().filter(|s| s.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} users without ground truth left out of the metrics");
    }
    (scored.into_iter().flatten().collect(), skipped)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation across runs; zero for a single run.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Summary { mean, std }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
}

impl RunMetrics {
    pub fn from_scores(seed: u64, scores: &[UserScore]) -> RunMetrics {
        let n = scores.len().max(1) as f64;
        // fixed summation order keeps runs comparable bit for bit
        let sum = |f: fn(&UserScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
        RunMetrics {
            seed,
            precision: sum(|s| s.precision),
            recall: sum(|s| s.recall),
            ndcg: sum(|s| s.ndcg),
            users: scores.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: Strategy,
    pub space: String,
    pub k: usize,
    pub precision: Summary,
    pub recall: Summary,
    pub ndcg: Summary,
    pub runs: Vec<RunMetrics>,
    /// Per-user metrics averaged over runs, by user id.
    pub per_user: Vec<UserScore>,
    pub skipped_users: usize,
    pub fingerprint: String,
}

/// Recommends and scores once per seed, then aggregates. `recommend` receives the seed
/// and must return one recommendation per evaluated user.
pub fn run_experiment<F>(
    strategy: Strategy,
    space: &str,
    seeds: &[u64],
    k: usize,
    truth: &GroundTruth,
    fingerprint: &str,
    mut recommend: F,
) -> Result<EvalReport>
where
    F: FnMut(u64) -> Result<Vec<Recommendation>>,
{
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    let mut per_user: BTreeMap<UserId, (f64, f64, f64, usize)> = BTreeMap::new();
    let mut skipped_users = 0;
    for &seed in seeds {
        let recs = recommend(seed)?;
        let (scores, skipped) = score_recommendations(&recs, truth, k);
        skipped_users = skipped;
        for s in &scores {
            let e = per_user.entry(s.user).or_insert((0.0, 0.0, 0.0, 0));
            e.0 += s.precision;
            e.1 += s.recall;
            e.2 += s.ndcg;
            e.3 += 1;
        }
        let run = RunMetrics::from_scores(seed, &scores);
        log::info!(
            "{strategy} seed {seed}: precision@{k} {:.4} recall {:.4} ndcg {:.4}",
            run.precision,
            run.recall,
            run.ndcg
        );
        runs.push(run);
    }
    let pick = |f: fn(&RunMetrics) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(EvalReport {
        strategy,
        space: space.to_string(),
        k,
        precision: pick(|r| r.precision),
        recall: pick(|r| r.recall),
        ndcg: pick(|r| r.ndcg),
        per_user: per_user
            .into_iter()
            .map(|(user, (p, r, n, c))| {
                let c = c as f64;
                UserScore {
                    user,
                    precision: p / c,
                    recall: r / c,
                    ndcg: n / c,
                }
            })
            .collect(),
        runs,
        skipped_users,
        fingerprint: fingerprint.to_string(),
    })
}

/// Inclusive count range; `hi = None` is open-ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl Bin {
    pub fn contains(&self, n: usize) -> bool {
        n >= self.lo && self.hi.is_none_or(|h| n <= h)
    }

    pub fn label(&self) -> String {
        match self.hi {
            Some(h) if h == self.lo => h.to_string(),
            Some(h) => format!("{}-{}", self.lo, h),
            None => format!("{}+", self.lo),
        }
    }
}

pub fn default_bins() -> Vec<Bin> {
    vec![
        Bin { lo: 0, hi: Some(0) },
        Bin { lo: 1, hi: Some(1) },
        Bin { lo: 2, hi: Some(4) },
        Bin { lo: 5, hi: Some(9) },
        Bin { lo: 10, hi: None },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub signal: Signal,
    pub bin: Bin,
    pub users: usize,
    /// `None` for an empty bin.
    pub mean_precision: Option<f64>,
}

/// Registration-day counts of onboarding picks, streams and skips.
pub const BREAKDOWN_SIGNALS: [Signal; 3] = [Signal::Onboarding, Signal::Stream, Signal::Skip];

/// Mean per-user precision bucketed by how many events of each signal the user had on
/// registration day.
pub fn breakdown_by_interaction(
    scores: &[UserScore],
    log: &InteractionLog,
    universe: &UserUniverse,
    bins: &[Bin],
) -> Vec<BreakdownRow> {
    let mut rows = Vec::new();
    for signal in BREAKDOWN_SIGNALS {
        let counted: Vec<(usize, f64)> = scores
            .iter()
            .map(|s| {
                let day = universe.profile(s.user).map(|p| p.registration_day);
                let n = day.map_or(0, |d| {
                    log.on_day(s.user, d).iter().filter(|e| e.signal == signal).count()
                });
                (n, s.precision)
            })
            .collect();
        for &bin in bins {
            let inside: Vec<f64> = counted
                .iter()
                .filter(|(n, _)| bin.contains(*n))
                .map(|(_, p)| *p)
                .collect();
            rows.push(BreakdownRow {
                signal,
                bin,
                users: inside.len(),
                mean_precision: (!inside.is_empty())
                    .then(|| inside.iter().sum::<f64>() / inside.len() as f64),
            });
        }
    }
    rows
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// First popularity rank in the bucket (1-based).
    pub first_rank: u32,
    pub last_rank: u32,
    pub count: usize,
    pub frequency: f64,
}

/// How recommended slots spread over popularity ranks, in buckets of `bucket_size`
/// ranks covering the catalog.
pub fn popularity_distribution(
    recs: &[Recommendation],
    catalog: &Catalog,
    bucket_size: u32,
) -> Result<Vec<HistogramBucket>> {
    if bucket_size == 0 {
        return Err(Error::InvalidConfig("bucket size must be >= 1".into()));
    }
    let n = catalog.len() as u32;
    let buckets = n.div_ceil(bucket_size) as usize;
    let mut counts = vec![0usize; buckets];
    let mut total = 0usize;
    for r in recs {
        for (t, _) in &r.items {
            let rank = catalog
                .popularity_rank(*t)
                .ok_or_else(|| Error::Validation(vec![format!("track {t} not in catalog")]))?;
            counts[((rank - 1) / bucket_size) as usize] += 1;
            total += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBucket {
            first_rank: i as u32 * bucket_size + 1,
            last_rank: ((i as u32 + 1) * bucket_size).min(n),
            count,
            frequency: if total == 0 {
                0.0
            } else {
                count as f64 / total as f64
            },
        })
        .collect())
}

pub fn write_report_csv<W: Write>(reports: &[EvalReport], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "space,strategy,k,runs,precision_mean,precision_std,recall_mean,recall_std,ndcg_mean,ndcg_std,users,fingerprint"
    )?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.space,
            r.strategy,
            r.k,
            r.runs.len(),
            r.precision.mean,
            r.precision.std,
            r.recall.mean,
            r.recall.std,
            r.ndcg.mean,
            r.ndcg.std,
            r.per_user.len(),
            r.fingerprint
        )?;
    }
    Ok(())
}

fn strategy_title(s: Strategy) -> &'static str {
    match s {
        Strategy::Popularity => "Popularity",
        Strategy::FeatureClustering => "Input Features Clustering",
        Strategy::RegistrationStreams => "Registration Day Streams",
        Strategy::FullPersonalized => "Full-Personalization",
        Strategy::SemiPersonalized => "Semi-Personalization",
    }
}

/// Percentages with standard deviations, one row per report.
pub fn write_report_table<W: Write>(reports: &[EvalReport], mut w: W) -> std::io::Result<()> {
    let k = reports.first().map_or(0, |r| r.k);
    writeln!(
        w,
        "{:<8} {:<28} {:>16} {:>16} {:>16}",
        "Space",
        "Strategy",
        format!("Precision@{k}"),
        format!("Recall@{k}"),
        format!("NDCG@{k}")
    )?;
    let cell = |s: Summary| format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std);
    for r in reports {
        writeln!(
            w,
            "{:<8} {:<28} {:>16} {:>16} {:>16}",
            r.space,
            strategy_title(r.strategy),
            cell(r.precision),
            cell(r.recall),
            cell(r.ndcg)
        )?;
    }
    Ok(())
}

pub fn write_breakdown_csv<W: Write>(rows: &[BreakdownRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "signal,bin,users,mean_precision")?;
    for r in rows {
        let mean = r.mean_precision.map_or_else(String::new, |m| m.to_string());
        writeln!(w, "{},{},{},{}", r.signal, r.bin.label(), r.users, mean)?;
    }
    Ok(())
}

pub fn write_histogram_csv<W: Write>(buckets: &[HistogramBucket], mut w: W) -> std::io::Result<()> {
    writeln!(w, "first_rank,last_rank,count,frequency")?;
    for b in buckets {
        writeln!(w, "{},{},{},{}", b.first_rank, b.last_rank, b.count, b.frequency)?;
    }
    Ok(())
}
