//! Dataset bundles: the canonical on-disk container, schema-mapped loading of
//! external layouts, validation and a synthetic generator with planted preferences.

mod io;
mod schema;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use crate::catalog::{Catalog, Split, UserUniverse};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::ids::{AlbumId, ArtistId, PlaylistId, TrackId, UserId};
use crate::interactions::{EntityKind, InteractionLog};

pub use io::{load_bundle, save_bundle, BundleCounts, BundleManifest, EmbeddingFormat, SpaceEntry, MANIFEST_FILE};
pub use schema::{MappedTable, Row, SchemaMapping, TableSource};
pub use synthetic::{generate_synthetic, Planted, SyntheticConfig, SyntheticDataset, PLANTED_SPACE};

/// Track vectors of one embedding space and, when the space has them, warm user vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTables {
    pub tracks: EmbeddingTable,
    pub users: Option<EmbeddingTable>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub seed: Option<u64>,
    /// Ground-truth size below which a cold user is not evaluated.
    pub min_listens: usize,
    pub catalog: Catalog,
    pub universe: UserUniverse,
    /// Full warm histories plus the registration-day events of cold users.
    pub log: InteractionLog,
    pub ground_truth: GroundTruth,
    pub spaces: BTreeMap<String, SpaceTables>,
}

const MAX_LISTED_PROBLEMS: usize = 20;

impl DatasetBundle {
    pub fn warm_users(&self) -> Vec<UserId> {
        self.universe.warm.iter().copied().collect()
    }

    pub fn cold_users(&self, split: Split) -> Vec<UserId> {
        self.universe.cold_in(split)
    }

    pub fn space(&self, name: &str) -> Result<&SpaceTables> {
        self.spaces.get(name).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "bundle {:?} has no embedding space {name:?} (available: {:?})",
                self.name,
                self.spaces.keys().collect::<Vec<_>>()
            ))
        })
    }

    /// Cross-table invariants; every problem found is listed (up to a cap).
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(Error::Validation(p)) = self.universe.validate() {
            problems.extend(p);
        }
        let artists: BTreeSet<ArtistId> = self.catalog.artists().collect();
        let albums: BTreeSet<AlbumId> = self.catalog.albums().collect();
        let playlists: BTreeSet<PlaylistId> = self.catalog.playlists().map(|(p, _)| p).collect();
        for e in self.log.events() {
            let Some(profile) = self.universe.profile(e.user) else {
                problems.push(format!("event of unknown user {}", e.user));
                continue;
            };
            if self.universe.cold.contains_key(&e.user) && e.day != profile.registration_day {
                problems.push(format!(
                    "cold user {} has a {} event on day {} (registration day {})",
                    e.user, e.signal, e.day, profile.registration_day
                ));
            }
            let known = match e.kind {
                EntityKind::Track => self.catalog.contains(TrackId(e.entity)),
                EntityKind::Artist => artists.contains(&ArtistId(e.entity)),
                EntityKind::Album => albums.contains(&AlbumId(e.entity)),
                EntityKind::Playlist => playlists.contains(&PlaylistId(e.entity)),
            };
            if !known {
                problems.push(format!(
                    "user {} references unknown {} {}",
                    e.user, e.kind, e.entity
                ));
            }
        }
        for (u, tracks) in &self.ground_truth.users {
            if !self.universe.cold.contains_key(u) {
                problems.push(format!("ground truth for non-cold user {u}"));
            }
            for t in tracks {
                if !self.catalog.contains(*t) {
                    problems.push(format!("ground truth of user {u} references unknown track {t}"));
                }
            }
        }
        for (name, space) in &self.spaces {
            for &id in space.tracks.ids() {
                if !self.catalog.contains(TrackId(id)) {
                    problems.push(format!("space {name}: vector for unknown track {id}"));
                }
            }
            if let Some(users) = &space.users {
                if users.dim() != space.tracks.dim() {
                    problems.push(format!(
                        "space {name}: user dimension {} differs from track dimension {}",
                        users.dim(),
                        space.tracks.dim()
                    ));
                }
                for &id in users.ids() {
                    if !self.universe.is_warm(UserId(id)) {
                        problems.push(format!("space {name}: vector for non-warm user {id}"));
                    }
                }
            }
        }
        if problems.is_empty() {
            return Ok(());
        }
        let extra = problems.len().saturating_sub(MAX_LISTED_PROBLEMS);
        problems.truncate(MAX_LISTED_PROBLEMS);
        if extra > 0 {
            problems.push(format!("... and {extra} more"));
        }
        Err(Error::Validation(problems))
    }

    /// Ground truth of the given cold users, restricted to the catalog and the
    /// minimum listen count.
    pub fn evaluation_truth(&self, users: &[UserId]) -> GroundTruth {
        let wanted: BTreeSet<UserId> = users.iter().copied().collect();
        let subset = GroundTruth::new(
            self.ground_truth
                .users
                .iter()
                .filter(|(u, _)| wanted.contains(u))
                .map(|(u, t)| (*u, t.clone()))
                .collect(),
        );
        subset.restricted(&self.catalog, self.min_listens)
    }
}
