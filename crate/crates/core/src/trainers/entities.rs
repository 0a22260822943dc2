use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::embedding::{mean_embedding, weighted_mean_embedding, EmbeddingTable, MeanEmbedding};
use crate::error::Result;
use crate::ids::{AlbumId, ArtistId, PlaylistId, UserId};
use crate::interactions::{EntityKind, InteractionLog};
use crate::par;

/// Mean of the member tracks' vectors: an album's tracks, an artist's tracks, or a
/// playlist's tracklist. Unresolvable entities yield the null vector.
pub fn derive_entity_embedding(
    kind: EntityKind,
    id: u64,
    tracks: &EmbeddingTable,
    catalog: &Catalog,
) -> MeanEmbedding {
    let members: &[_] = match kind {
        EntityKind::Track => return mean_embedding([id], tracks),
        EntityKind::Artist => catalog.artist_tracks(ArtistId(id)),
        EntityKind::Album => catalog.album_tracks(AlbumId(id)),
        EntityKind::Playlist => catalog.playlist_tracks(PlaylistId(id)),
    };
    mean_embedding(members.iter().map(|t| t.0), tracks)
}

/// Vectors for every music entity level, derived once from track vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityEmbeddings {
    pub tracks: EmbeddingTable,
    pub artists: EmbeddingTable,
    pub albums: EmbeddingTable,
    pub playlists: EmbeddingTable,
}

impl EntityEmbeddings {
    /// Derives artist, album and playlist tables; entities with no embedded member track are omitted.
    pub fn derive(tracks: EmbeddingTable, catalog: &Catalog) -> Result<Self> {
        let build = |kind: EntityKind, ids: Vec<u64>| -> Result<EmbeddingTable> {
            let rows = par::map_slice(&ids, |&id| derive_entity_embedding(kind, id, &tracks, catalog));
            EmbeddingTable::from_rows(
                tracks.dim(),
                ids.iter()
                    .zip(rows)
                    .filter(|(_, m)| !m.is_null)
                    .map(|(id, m)| (*id, m.vector)),
            )
        };
        let artists = build(EntityKind::Artist, catalog.artists().map(|a| a.0).collect())?;
        let albums = build(EntityKind::Album, catalog.albums().map(|a| a.0).collect())?;
        let playlists = build(
            EntityKind::Playlist,
            catalog.playlists().map(|(p, _)| p.0).collect(),
        )?;
        Ok(EntityEmbeddings {
            tracks,
            artists,
            albums,
            playlists,
        })
    }

    pub fn dim(&self) -> usize {
        self.tracks.dim()
    }

    pub fn table(&self, kind: EntityKind) -> &EmbeddingTable {
        match kind {
            EntityKind::Track => &self.tracks,
            EntityKind::Artist => &self.artists,
            EntityKind::Album => &self.albums,
            EntityKind::Playlist => &self.playlists,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryWeighting {
    #[default]
    StreamCount,
    Unweighted,
}

/// Mean of streamed track vectors over the user's whole history.
pub fn warm_user_embedding_from_history(
    user: UserId,
    log: &InteractionLog,
    tracks: &EmbeddingTable,
    weighting: HistoryWeighting,
) -> MeanEmbedding {
    let counts = log.stream_counts(user);
    weighted_mean_embedding(
        counts.into_iter().map(|(t, c)| {
            let w = match weighting {
                HistoryWeighting::StreamCount => c as f64,
                HistoryWeighting::Unweighted => 1.0,
            };
            (t.0, w)
        }),
        tracks,
    )
}

/// History-mean vectors for many users, in the given order. Users without any
/// embedded stream get a zero row and are listed in the second return value.
pub fn warm_user_table(
    users: &[UserId],
    log: &InteractionLog,
    tracks: &EmbeddingTable,
    weighting: HistoryWeighting,
) -> Result<(EmbeddingTable, Vec<UserId>)> {
    let rows = par::map_slice(users, |&u| warm_user_embedding_from_history(u, log, tracks, weighting));
    let null: Vec<UserId> = users
        .iter()
        .zip(&rows)
        .filter(|(_, m)| m.is_null)
        .map(|(u, _)| *u)
        .collect();
    let table = EmbeddingTable::from_rows(
        tracks.dim(),
        users.iter().zip(rows).map(|(u, m)| (u.0, m.vector)),
    )?;
    Ok((table, null))
}
