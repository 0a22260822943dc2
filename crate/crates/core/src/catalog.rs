use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{AlbumId, ArtistId, PlaylistId, TrackId, UserId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackMeta {
    pub artist: ArtistId,
    pub album: AlbumId,
    pub genres: Vec<String>,
    /// 1 is the most popular track.
    pub popularity_rank: u32,
}

/// The fixed music catalog: track metadata plus playlist track lists.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    tracks: BTreeMap<TrackId, TrackMeta>,
    playlists: BTreeMap<PlaylistId, Vec<TrackId>>,
    by_artist: BTreeMap<ArtistId, Vec<TrackId>>,
    by_album: BTreeMap<AlbumId, Vec<TrackId>>,
    by_rank: Vec<TrackId>,
}

impl Catalog {
    /// Builds a catalog, checking that popularity ranks form a bijection onto `1..=m`
    /// and that playlists only reference known tracks.
    pub fn new(
        tracks: BTreeMap<TrackId, TrackMeta>,
        playlists: BTreeMap<PlaylistId, Vec<TrackId>>,
    ) -> Result<Self> {
        let m = tracks.len();
        let mut by_rank = vec![None; m];
        let mut problems = Vec::new();
        for (&id, meta) in &tracks {
            let r = meta.popularity_rank as usize;
            if r == 0 || r > m {
                problems.push(format!("track {id}: popularity rank {r} outside 1..={m}"));
            } else if let Some(prev) = by_rank[r - 1] {
                problems.push(format!("tracks {prev} and {id} share popularity rank {r}"));
            } else {
                by_rank[r - 1] = Some(id);
            }
        }
        for (pid, list) in &playlists {
            for t in list {
                if !tracks.contains_key(t) {
                    problems.push(format!("playlist {pid} references unknown track {t}"));
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let mut by_artist: BTreeMap<ArtistId, Vec<TrackId>> = BTreeMap::new();
        let mut by_album: BTreeMap<AlbumId, Vec<TrackId>> = BTreeMap::new();
        for (&id, meta) in &tracks {
            by_artist.entry(meta.artist).or_default().push(id);
            by_album.entry(meta.album).or_default().push(id);
        }
        Ok(Catalog {
            tracks,
            playlists,
            by_artist,
            by_album,
            by_rank: by_rank.into_iter().map(|t| t.expect("checked")).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn contains(&self, track: TrackId) -> bool {
        self.tracks.contains_key(&track)
    }

    pub fn meta(&self, track: TrackId) -> Option<&TrackMeta> {
        self.tracks.get(&track)
    }

    pub fn tracks(&self) -> impl Iterator<Item = (TrackId, &TrackMeta)> {
        self.tracks.iter().map(|(k, v)| (*k, v))
    }

    pub fn track_ids(&self) -> impl Iterator<Item = TrackId> + '_ {
        self.tracks.keys().copied()
    }

    pub fn popularity_rank(&self, track: TrackId) -> Option<u32> {
        self.tracks.get(&track).map(|m| m.popularity_rank)
    }

    /// Tracks ordered by global popularity rank (most popular first).
    pub fn by_popularity(&self) -> &[TrackId] {
        &self.by_rank
    }

    pub fn artist_tracks(&self, artist: ArtistId) -> &[TrackId] {
        self.by_artist.get(&artist).map_or(&[], Vec::as_slice)
    }

    pub fn album_tracks(&self, album: AlbumId) -> &[TrackId] {
        self.by_album.get(&album).map_or(&[], Vec::as_slice)
    }

    pub fn playlist_tracks(&self, playlist: PlaylistId) -> &[TrackId] {
        self.playlists.get(&playlist).map_or(&[], Vec::as_slice)
    }

    pub fn artists(&self) -> impl Iterator<Item = ArtistId> + '_ {
        self.by_artist.keys().copied()
    }

    pub fn albums(&self) -> impl Iterator<Item = AlbumId> + '_ {
        self.by_album.keys().copied()
    }

    pub fn playlists(&self) -> impl Iterator<Item = (PlaylistId, &[TrackId])> {
        self.playlists.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Genre tags of an artist: the union of its tracks' tags, in first-seen order.
    pub fn artist_genres(&self, artist: ArtistId) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in self.artist_tracks(artist) {
            for g in &self.tracks[t].genres {
                if !out.contains(&g.as_str()) {
                    out.push(g);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    /// ISO country code; `None` when unknown.
    pub country: Option<String>,
    pub age: Option<u32>,
    /// Day index of account creation.
    pub registration_day: i64,
}

/// Warm and cold users with their demographics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UserUniverse {
    pub warm: BTreeSet<UserId>,
    pub cold: BTreeMap<UserId, Split>,
    pub profiles: BTreeMap<UserId, UserProfile>,
}

impl UserUniverse {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for u in &self.warm {
            if self.cold.contains_key(u) {
                problems.push(format!("user {u} is both warm and cold"));
            }
            if !self.profiles.contains_key(u) {
                problems.push(format!("warm user {u} has no demographics entry"));
            }
        }
        for u in self.cold.keys() {
            if !self.profiles.contains_key(u) {
                problems.push(format!("cold user {u} has no demographics entry"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn is_warm(&self, user: UserId) -> bool {
        self.warm.contains(&user)
    }

    pub fn cold_in(&self, split: Split) -> Vec<UserId> {
        self.cold
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(u, _)| *u)
            .collect()
    }

    pub fn profile(&self, user: UserId) -> Option<&UserProfile> {
        self.profiles.get(&user)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(rank: u32) -> TrackMeta {
        TrackMeta {
            artist: ArtistId(1),
            album: AlbumId(1),
            genres: vec![],
            popularity_rank: rank,
        }
    }

    #[test]
    fn rank_must_be_bijection() {
        let mut tracks = BTreeMap::new();
        tracks.insert(TrackId(1), meta(1));
        tracks.insert(TrackId(2), meta(1));
        assert!(matches!(
            Catalog::new(tracks, BTreeMap::new()),
            Err(Error::Validation(_))
        ));

        let mut tracks = BTreeMap::new();
        tracks.insert(TrackId(1), meta(2));
        tracks.insert(TrackId(2), meta(1));
        let c = Catalog::new(tracks, BTreeMap::new()).unwrap();
        assert_eq!(c.by_popularity(), &[TrackId(2), TrackId(1)]);
        assert_eq!(c.artist_tracks(ArtistId(1)).len(), 2);
    }

    #[test]
    fn warm_and_cold_disjoint() {
        let mut u = UserUniverse::default();
        let p = UserProfile {
            country: None,
            age: None,
            registration_day: 0,
        };
        u.warm.insert(UserId(1));
        u.cold.insert(UserId(1), Split::Test);
        u.profiles.insert(UserId(1), p);
        assert!(u.validate().is_err());
    }
}
