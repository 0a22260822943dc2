//! Ranked track lists for cold users.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::embedding::{mean_embedding, norm, top_k_by_similarity, EmbeddingTable};
use crate::error::{Error, Result};
use crate::ids::{TrackId, UserId};
use crate::interactions::{Event, InteractionLog, Signal};
use crate::segmentation::{
    assign_segment, rank_by_popularity, AssignMetric, KMeansConfig, PopularityMeasure,
    Segmentation,
};

pub const DEFAULT_TOP_K: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "semi")]
    SemiPersonalized,
    #[serde(rename = "full")]
    FullPersonalized,
    #[serde(rename = "popularity")]
    Popularity,
    #[serde(rename = "reg-streams")]
    RegistrationStreams,
    #[serde(rename = "feat-cluster")]
    FeatureClustering,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::SemiPersonalized,
        Strategy::FullPersonalized,
        Strategy::Popularity,
        Strategy::RegistrationStreams,
        Strategy::FeatureClustering,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SemiPersonalized => "semi",
            Strategy::FullPersonalized => "full",
            Strategy::Popularity => "popularity",
            Strategy::RegistrationStreams => "reg-streams",
            Strategy::FeatureClustering => "feat-cluster",
        }
    }

    /// Whether the output depends on the experiment seed.
    pub fn is_seeded(self) -> bool {
        !matches!(self, Strategy::Popularity | Strategy::RegistrationStreams)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub user: UserId,
    pub strategy: Strategy,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub segment: Option<usize>,
    /// `(track, score)` by decreasing score.
    pub items: Vec<(TrackId, f64)>,
}

impl Recommendation {
    pub fn tracks(&self) -> Vec<TrackId> {
        self.items.iter().map(|(t, _)| *t).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Unique tracks, non-increasing scores and exactly `min(k, catalog_len)` entries.
    pub fn check(&self, k: usize, catalog_len: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.items.len() != k.min(catalog_len) {
            problems.push(format!(
                "user {}: {} items, expected {}",
                self.user,
                self.items.len(),
                k.min(catalog_len)
            ));
        }
        let unique: HashSet<TrackId> = self.items.iter().map(|(t, _)| *t).collect();
        if unique.len() != self.items.len() {
            problems.push(format!("user {}: duplicate tracks", self.user));
        }
        if self.items.windows(2).any(|w| w[1].1 > w[0].1) {
            problems.push(format!("user {}: scores increase", self.user));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// `user \t strategy \t segment-or-dash \t comma-separated tracks`
    pub fn write_record<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let segment = self.segment.map_or_else(|| "-".to_string(), |s| s.to_string());
        let tracks: Vec<String> = self.items.iter().map(|(t, _)| t.to_string()).collect();
        writeln!(w, "{}\t{}\t{}\t{}", self.user, self.strategy, segment, tracks.join(","))
    }

    /// Inverse of [`Recommendation::write_record`]. Scores are not stored, so read-back
    /// items carry reciprocal-rank scores.
    pub fn parse_record(line: &str) -> std::result::Result<Recommendation, String> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(format!("expected 4 tab-separated fields, found {}", cols.len()));
        }
        let user = cols[0]
            .parse::<u64>()
            .map_err(|e| format!("user id {:?}: {e}", cols[0]))?;
        let strategy: Strategy = cols[1].parse().map_err(|e: Error| e.to_string())?;
        let segment = match cols[2] {
            "-" => None,
            s => Some(s.parse::<usize>().map_err(|e| format!("segment {s:?}: {e}"))?),
        };
        let tracks = if cols[3].is_empty() {
            Vec::new()
        } else {
            cols[3]
                .split(',')
                .map(|t| t.parse::<u64>().map(TrackId).map_err(|e| format!("track {t:?}: {e}")))
                .collect::<std::result::Result<Vec<_>, _>>()?
        };
        Ok(Recommendation {
            user: UserId(user),
            strategy,
            segment,
            items: rank_scored(tracks),
        })
    }
}

/// Reciprocal-rank scores for lists that carry no similarity value.
fn rank_scored(tracks: impl IntoIterator<Item = TrackId>) -> Vec<(TrackId, f64)> {
    tracks
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, 1.0 / (i + 1) as f64))
        .collect()
}

/// Global ordering of the whole catalog by distinct listeners among `users`, then
/// popularity rank, then id. Tracks nobody streamed follow in catalog rank order, so
/// the list always covers the catalog.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PopularityList {
    tracks: Vec<TrackId>,
}

impl PopularityList {
    pub fn from_log(log: &InteractionLog, catalog: &Catalog, users: &BTreeSet<UserId>) -> Self {
        let mut counts: HashMap<TrackId, usize> = HashMap::new();
        for &u in users {
            for t in log.stream_counts(u).into_keys() {
                if catalog.contains(t) {
                    *counts.entry(t).or_insert(0) += 1;
                }
            }
        }
        let mut tracks = rank_by_popularity(&counts, catalog, usize::MAX);
        let seen: HashSet<TrackId> = tracks.iter().copied().collect();
        tracks.extend(catalog.by_popularity().iter().filter(|t| !seen.contains(t)));
        PopularityList { tracks }
    }

    pub fn from_tracks(tracks: Vec<TrackId>) -> Self {
        PopularityList { tracks }
    }

    pub fn tracks(&self) -> &[TrackId] {
        &self.tracks
    }

    pub fn top(&self, k: usize) -> &[TrackId] {
        &self.tracks[..k.min(self.tracks.len())]
    }

    /// `head` followed by the most popular tracks not already in it, `k` in total.
    pub fn pad(&self, head: &[TrackId], k: usize) -> Vec<TrackId> {
        let mut out: Vec<TrackId> = Vec::with_capacity(k);
        let mut seen = HashSet::with_capacity(k);
        for &t in head.iter().chain(self.tracks.iter()) {
            if out.len() >= k {
                break;
            }
            if seen.insert(t) {
                out.push(t);
            }
        }
        out
    }
}

pub fn baseline_popularity(user: UserId, popular: &PopularityList, k: usize) -> Recommendation {
    Recommendation {
        user,
        strategy: Strategy::Popularity,
        segment: None,
        items: rank_scored(popular.top(k).iter().copied()),
    }
}

/// The assigned segment's precomputed list, padded from global popularity.
pub fn recommend_semi_personalized(
    user: UserId,
    embedding: &[f64],
    seg: &Segmentation,
    popular: &PopularityList,
    k: usize,
) -> Recommendation {
    let s = assign_segment(embedding, &seg.centroids, seg.metric);
    semi_from_segment(user, s, seg, popular, k, Strategy::SemiPersonalized)
}

fn semi_from_segment(
    user: UserId,
    s: usize,
    seg: &Segmentation,
    popular: &PopularityList,
    k: usize,
    strategy: Strategy,
) -> Recommendation {
    let head = seg.top_items.get(s).map_or(&[][..], |v| v.as_slice());
    Recommendation {
        user,
        strategy,
        segment: Some(s),
        items: rank_scored(popular.pad(head, k)),
    }
}

/// Nearest tracks by cosine similarity. A zero vector carries no preference, so the
/// popularity list is served instead.
pub fn recommend_full_personalized(
    user: UserId,
    embedding: &[f64],
    tracks: &EmbeddingTable,
    popular: &PopularityList,
    k: usize,
) -> Result<Recommendation> {
    if embedding.len() != tracks.dim() {
        return Err(Error::DimensionMismatch {
            expected: tracks.dim(),
            got: embedding.len(),
        });
    }
    if norm(embedding) == 0.0 {
        log::warn!("user {user}: null embedding, serving popularity");
        return Ok(Recommendation {
            strategy: Strategy::FullPersonalized,
            ..baseline_popularity(user, popular, k)
        });
    }
    Ok(Recommendation {
        user,
        strategy: Strategy::FullPersonalized,
        segment: None,
        items: nearest_tracks(embedding, tracks, k),
    })
}

fn nearest_tracks(query: &[f64], tracks: &EmbeddingTable, k: usize) -> Vec<(TrackId, f64)> {
    top_k_by_similarity(query, tracks, k, &HashSet::new())
        .into_iter()
        .map(|(t, s)| (TrackId(t), s))
        .collect()
}

/// Mean embedding of the tracks streamed in `events` (one term per stream), then
/// nearest tracks; popularity when there is no usable stream.
pub fn baseline_registration_streams(
    user: UserId,
    events: &[Event],
    tracks: &EmbeddingTable,
    popular: &PopularityList,
    k: usize,
) -> Recommendation {
    let streamed = events
        .iter()
        .filter(|e| e.signal == Signal::Stream)
        .filter_map(|e| e.track())
        .map(|t| t.0);
    let mean = mean_embedding(streamed, tracks);
    if mean.is_null || norm(&mean.vector) == 0.0 {
        return Recommendation {
            strategy: Strategy::RegistrationStreams,
            ..baseline_popularity(user, popular, k)
        };
    }
    Recommendation {
        user,
        strategy: Strategy::RegistrationStreams,
        segment: None,
        items: nearest_tracks(&mean.vector, tracks, k),
    }
}

/// Segments built from raw input features rather than learned embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureClustering {
    pub segmentation: Segmentation,
}

impl FeatureClustering {
    /// K-means over warm users' feature vectors; each cluster recommends the most
    /// popular tracks among its members.
    pub fn fit(
        warm_features: &EmbeddingTable,
        log: &InteractionLog,
        catalog: &Catalog,
        cfg: &KMeansConfig,
        list_len: usize,
    ) -> Result<Self> {
        let segmentation = Segmentation::cluster(warm_features, AssignMetric::Euclidean, cfg)?
            .with_top_items(log, catalog, list_len, PopularityMeasure::DistinctListeners);
        Ok(FeatureClustering { segmentation })
    }

    pub fn recommend(
        &self,
        user: UserId,
        features: &[f64],
        popular: &PopularityList,
        k: usize,
    ) -> Recommendation {
        let s = self.segmentation.assign(features);
        semi_from_segment(user, s, &self.segmentation, popular, k, Strategy::FeatureClustering)
    }
}
