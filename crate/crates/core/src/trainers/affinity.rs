use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::ids::{TrackId, UserId};
use crate::interactions::{EntityKind, InteractionLog, Signal};
use crate::sparse::CsrMatrix;

/// Linear affinity formula:
/// `score(u, t) = stream * #streams(u, t) + favorite * 1[u favorited t, its album or its artist]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffinityWeights {
    pub stream: f64,
    pub favorite: f64,
}

impl Default for AffinityWeights {
    fn default() -> Self {
        AffinityWeights {
            stream: 1.0,
            favorite: 2.0,
        }
    }
}

impl AffinityWeights {
    /// Parses `(signal name, weight)` pairs over the defaults.
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        let mut w = AffinityWeights::default();
        for (name, value) in pairs {
            let signal: Signal = name.parse()?;
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "affinity weight for `{name}` must be finite and nonnegative, got {value}"
                )));
            }
            match signal {
                Signal::Stream => w.stream = value,
                Signal::Favorite => w.favorite = value,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "signal `{other}` has no affinity term"
                    )))
                }
            }
        }
        Ok(w)
    }
}

/// Sparse users x tracks affinity scores; rows follow `users`, columns follow `tracks`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    pub users: Vec<UserId>,
    pub tracks: Vec<TrackId>,
    pub scores: CsrMatrix,
}

pub fn build_affinity_matrix(
    log: &InteractionLog,
    catalog: &Catalog,
    weights: AffinityWeights,
) -> AffinityMatrix {
    let tracks: Vec<TrackId> = catalog.track_ids().collect();
    let col: BTreeMap<TrackId, usize> = tracks.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let users: Vec<UserId> = log.users().collect();
    let mut triplets = Vec::new();
    for (row, &user) in users.iter().enumerate() {
        let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
        let mut fav_tracks = HashSet::new();
        let mut fav_albums = HashSet::new();
        let mut fav_artists = HashSet::new();
        for e in log.for_user(user) {
            match (e.signal, e.kind) {
                (Signal::Stream, EntityKind::Track) => {
                    if let Some(&c) = col.get(&TrackId(e.entity)) {
                        *scores.entry(c).or_insert(0.0) += weights.stream;
                    }
                }
                (Signal::Favorite, EntityKind::Track) => {
                    fav_tracks.insert(e.entity);
                }
                (Signal::Favorite, EntityKind::Album) => {
                    fav_albums.insert(e.entity);
                }
                (Signal::Favorite, EntityKind::Artist) => {
                    fav_artists.insert(e.entity);
                }
                _ => {}
            }
        }
        if !(fav_tracks.is_empty() && fav_albums.is_empty() && fav_artists.is_empty()) {
            for (c, t) in tracks.iter().enumerate() {
                let meta = catalog.meta(*t).expect("catalog track");
                if fav_tracks.contains(&t.0)
                    || fav_albums.contains(&meta.album.0)
                    || fav_artists.contains(&meta.artist.0)
                {
                    *scores.entry(c).or_insert(0.0) += weights.favorite;
                }
            }
        }
        triplets.extend(scores.into_iter().map(|(c, v)| (row, c, v)));
    }
    AffinityMatrix {
        scores: CsrMatrix::from_triplets(users.len(), tracks.len(), triplets),
        users,
        tracks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::TrackMeta;
    use crate::ids::{AlbumId, ArtistId};
    use crate::interactions::Event;

    fn catalog() -> Catalog {
        let mut tracks = BTreeMap::new();
        for i in 1..=3u64 {
            tracks.insert(
                TrackId(i),
                TrackMeta {
                    artist: ArtistId(if i < 3 { 10 } else { 11 }),
                    album: AlbumId(i),
                    genres: vec![],
                    popularity_rank: i as u32,
                },
            );
        }
        Catalog::new(tracks, BTreeMap::new()).unwrap()
    }

    #[test]
    fn stream_counts_and_favorites() {
        let u = UserId(1);
        let mut evs = vec![Event::stream(u, 0, TrackId(1)); 3];
        let m = build_affinity_matrix(&InteractionLog::new(evs.clone()), &catalog(), AffinityWeights::default());
        assert_eq!(m.scores.get(0, 0), 3.0);

        evs.truncate(2);
        evs.push(Event {
            user: u,
            day: 0,
            signal: Signal::Favorite,
            kind: EntityKind::Track,
            entity: 1,
        });
        let m = build_affinity_matrix(&InteractionLog::new(evs.clone()), &catalog(), AffinityWeights::default());
        assert_eq!(m.scores.get(0, 0), 4.0);

        // favoriting an artist marks all of its tracks once
        evs.push(Event {
            user: u,
            day: 0,
            signal: Signal::Favorite,
            kind: EntityKind::Artist,
            entity: 10,
        });
        let m = build_affinity_matrix(&InteractionLog::new(evs), &catalog(), AffinityWeights::default());
        assert_eq!(m.scores.get(0, 0), 4.0);
        assert_eq!(m.scores.get(0, 1), 2.0);
        assert_eq!(m.scores.get(0, 2), 0.0);
    }

    #[test]
    fn empty_log_gives_empty_matrix() {
        let m = build_affinity_matrix(&InteractionLog::default(), &catalog(), AffinityWeights::default());
        assert_eq!(m.scores.nnz(), 0);
        assert!(m.users.is_empty());
    }

    #[test]
    fn weight_parsing() {
        let w = AffinityWeights::from_pairs([("stream", 0.5), ("favorite", 3.0)]).unwrap();
        assert_eq!(w.stream, 0.5);
        assert!(matches!(
            AffinityWeights::from_pairs([("likes", 1.0)]),
            Err(Error::UnknownSignal(_))
        ));
        assert!(AffinityWeights::from_pairs([("stream", -1.0)]).is_err());
        assert!(AffinityWeights::from_pairs([("skip", 1.0)]).is_err());
    }
}
