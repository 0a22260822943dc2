use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, nearest_centroid, KMeansConfig};
use crate::catalog::{Catalog, UserUniverse};
use crate::embedding::{norm, EmbeddingTable};
use crate::error::{Error, Result};
use crate::features::{age_class, AgeClass};
use crate::ids::{ArtistId, TrackId, UserId};
use crate::interactions::{EntityKind, InteractionLog, Signal};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignMetric {
    #[default]
    Euclidean,
    /// Vectors are L2-normalized before Euclidean comparison.
    Cosine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopularityMeasure {
    #[default]
    DistinctListeners,
    Streams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentProfile {
    pub country: String,
    pub age_class: String,
    pub genres: Vec<String>,
    pub members: usize,
}

/// A finished segmentation. Centroids are kept at single precision so that the
/// on-disk container roundtrips exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub metric: AssignMetric,
    /// Row `i` is the centroid of segment `i`.
    pub centroids: EmbeddingTable,
    pub assignment: BTreeMap<UserId, usize>,
    pub top_items: Vec<Vec<TrackId>>,
    pub profiles: Vec<SegmentProfile>,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Segment whose centroid is nearest to `v`; ties go to the lowest index.
pub fn assign_segment(v: &[f64], centroids: &EmbeddingTable, metric: AssignMetric) -> usize {
    match metric {
        AssignMetric::Euclidean => nearest_centroid(v, centroids.as_flat(), centroids.dim()).0,
        AssignMetric::Cosine => {
            nearest_centroid(&normalized(v), centroids.as_flat(), centroids.dim()).0
        }
    }
}

impl Segmentation {
    /// Clusters the rows of `users` (warm user vectors) and records the assignment.
    /// Top items and profiles are left empty; see [`Segmentation::with_top_items`].
    pub fn cluster(users: &EmbeddingTable, metric: AssignMetric, cfg: &KMeansConfig) -> Result<Self> {
        let dim = users.dim();
        let points: Vec<f64> = match metric {
            AssignMetric::Euclidean => users.as_flat().to_vec(),
            AssignMetric::Cosine => users.iter().flat_map(|(_, v)| normalized(v)).collect(),
        };
        let fit = kmeans(&points, dim, cfg)?;
        let centroids = EmbeddingTable::from_flat(
            dim,
            (0..fit.k() as u64).collect(),
            fit.centroids.iter().map(|&x| x as f32 as f64).collect(),
        )?;
        let assignment = users
            .ids()
            .iter()
            .zip(&fit.assignment)
            .map(|(&u, &a)| (UserId(u), a))
            .collect();
        Ok(Segmentation {
            metric,
            top_items: vec![Vec::new(); fit.k()],
            profiles: Vec::new(),
            centroids,
            assignment,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn assign(&self, v: &[f64]) -> usize {
        assign_segment(v, &self.centroids, self.metric)
    }

    pub fn members(&self, segment: usize) -> Vec<UserId> {
        self.assignment
            .iter()
            .filter(|(_, &s)| s == segment)
            .map(|(u, _)| *u)
            .collect()
    }

    pub fn with_top_items(
        mut self,
        log: &InteractionLog,
        catalog: &Catalog,
        k: usize,
        measure: PopularityMeasure,
    ) -> Self {
        self.top_items = segment_top_items(&self, log, catalog, k, measure);
        self
    }

    pub fn with_profiles(mut self, universe: &UserUniverse, log: &InteractionLog, catalog: &Catalog) -> Self {
        self.profiles = (0..self.k())
            .map(|s| describe_segment(s, &self, universe, log, catalog))
            .collect::<Result<_>>()
            .expect("segments in range");
        self
    }

    /// Structural checks used before a segmentation is published or served.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.top_items.len() != self.k() {
            problems.push(format!(
                "{} top-item lists for {} segments",
                self.top_items.len(),
                self.k()
            ));
        }
        if !self.profiles.is_empty() && self.profiles.len() != self.k() {
            problems.push("profile count does not match segment count".into());
        }
        let mut sizes = vec![0usize; self.k()];
        for (u, &s) in &self.assignment {
            match sizes.get_mut(s) {
                Some(c) => *c += 1,
                None => problems.push(format!("user {u} assigned to missing segment {s}")),
            }
        }
        if !self.assignment.is_empty() {
            if let Some(s) = sizes.iter().position(|&c| c == 0) {
                problems.push(format!("segment {s} is empty"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Orders tracks by count (descending), then global popularity rank, then id.
pub fn rank_by_popularity(counts: &HashMap<TrackId, usize>, catalog: &Catalog, k: usize) -> Vec<TrackId> {
    let mut ranked: Vec<(TrackId, usize)> = counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(t, c)| (*t, *c))
        .collect();
    ranked.sort_unstable_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| {
                let ra = catalog.popularity_rank(a.0).unwrap_or(u32::MAX);
                let rb = catalog.popularity_rank(b.0).unwrap_or(u32::MAX);
                ra.cmp(&rb)
            })
            .then(a.0.cmp(&b.0))
    });
    ranked.truncate(k);
    ranked.into_iter().map(|(t, _)| t).collect()
}

/// Per-segment most popular tracks among the segment's members.
pub fn segment_top_items(
    seg: &Segmentation,
    log: &InteractionLog,
    catalog: &Catalog,
    k: usize,
    measure: PopularityMeasure,
) -> Vec<Vec<TrackId>> {
    let mut counts: Vec<HashMap<TrackId, usize>> = vec![HashMap::new(); seg.k()];
    for (user, &s) in &seg.assignment {
        let streams = log.stream_counts(*user);
        for (t, c) in streams {
            *counts[s].entry(t).or_insert(0) += match measure {
                PopularityMeasure::DistinctListeners => 1,
                PopularityMeasure::Streams => c as usize,
            };
        }
    }
    counts
        .iter()
        .map(|c| rank_by_popularity(c, catalog, k))
        .collect()
}

fn mode<T: Ord + Clone>(values: impl Iterator<Item = T>) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0) += 1;
    }
    // BTreeMap iteration is ascending, so the first maximum wins ties
    counts
        .into_iter()
        .fold(None, |best: Option<(T, usize)>, (v, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((v, c)),
        })
        .map(|(v, _)| v)
}

const PROFILE_GENRES: usize = 3;

/// Most common country, age class and genres (over favorited or streamed artists)
/// among the members of a segment.
pub fn describe_segment(
    segment: usize,
    seg: &Segmentation,
    universe: &UserUniverse,
    log: &InteractionLog,
    catalog: &Catalog,
) -> Result<SegmentProfile> {
    if segment >= seg.k() {
        return Err(Error::InvalidConfig(format!(
            "segment {segment} out of range (k = {})",
            seg.k()
        )));
    }
    let members = seg.members(segment);
    let profiles: Vec<_> = members.iter().filter_map(|u| universe.profile(*u)).collect();
    let country = mode(profiles.iter().filter_map(|p| p.country.clone()))
        .unwrap_or_else(|| "unknown".into());
    let age = mode(
        profiles
            .iter()
            .map(|p| age_class(p.age))
            .filter(|a| *a != AgeClass::Unknown),
    )
    .map_or_else(|| "unknown".to_string(), |a| a.to_string());

    let mut genre_counts: BTreeMap<String, usize> = BTreeMap::new();
    for u in &members {
        let mut artists = BTreeSet::new();
        for e in log.for_user(*u) {
            match (e.signal, e.kind) {
                (Signal::Stream | Signal::Favorite, EntityKind::Track) => {
                    if let Some(m) = catalog.meta(TrackId(e.entity)) {
                        artists.insert(m.artist);
                    }
                }
                (Signal::Favorite | Signal::Onboarding, EntityKind::Artist) => {
                    artists.insert(ArtistId(e.entity));
                }
                _ => {}
            }
        }
        let genres: BTreeSet<&str> = artists
            .iter()
            .flat_map(|a| catalog.artist_genres(*a))
            .collect();
        for g in genres {
            *genre_counts.entry(g.to_string()).or_insert(0) += 1;
        }
    }
    let mut genres: Vec<(String, usize)> = genre_counts.into_iter().collect();
    genres.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(SegmentProfile {
        country,
        age_class: age,
        genres: genres.into_iter().take(PROFILE_GENRES).map(|g| g.0).collect(),
        members: members.len(),
    })
}
