use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{MappedTable, SchemaMapping, TableSource};
use super::{DatasetBundle, SpaceTables};
use crate::catalog::{Catalog, Split, TrackMeta, UserProfile, UserUniverse};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::ids::{AlbumId, ArtistId, PlaylistId, TrackId, UserId};
use crate::interactions::{EntityKind, Event, InteractionLog, Signal};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub(crate) const TRACKS_FILE: &str = "tracks.tsv";
pub(crate) const PLAYLISTS_FILE: &str = "playlists.tsv";
pub(crate) const USERS_FILE: &str = "users.tsv";
pub(crate) const EVENTS_FILE: &str = "events.tsv";
pub(crate) const GROUND_TRUTH_FILE: &str = "ground_truth.tsv";
const FORMAT: &str = "coldstart-bundle";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    #[default]
    Emb1,
    Text,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceEntry {
    pub name: String,
    pub dim: usize,
    pub tracks: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<String>,
    #[serde(default)]
    pub format: EmbeddingFormat,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleCounts {
    pub tracks: usize,
    pub playlists: usize,
    pub warm_users: usize,
    pub cold_validation: usize,
    pub cold_test: usize,
    pub events: usize,
    pub ground_truth_users: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub min_listens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<BundleCounts>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spaces: Vec<SpaceEntry>,
    /// Present when the tables use an external layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<SchemaMapping>,
}

impl BundleManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: BundleManifest =
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if m.format != FORMAT {
            return Err(Error::BadMagic {
                what: "bundle manifest",
                expected: FORMAT,
            });
        }
        if m.version != VERSION {
            return Err(Error::VersionMismatch {
                what: "bundle manifest",
                found: m.version,
            });
        }
        Ok(m)
    }
}

fn counts_of(b: &DatasetBundle) -> BundleCounts {
    BundleCounts {
        tracks: b.catalog.len(),
        playlists: b.catalog.playlists().count(),
        warm_users: b.universe.warm.len(),
        cold_validation: b.universe.cold_in(Split::Validation).len(),
        cold_test: b.universe.cold_in(Split::Test).len(),
        events: b.log.len(),
        ground_truth_users: b.ground_truth.len(),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>, sep: &str) -> String {
    items.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(sep)
}

/// Writes the canonical layout. Output depends only on the bundle contents, so saving
/// the same bundle twice yields identical files.
pub fn save_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let emb_dir = dir.join("embeddings");
    fs::create_dir_all(&emb_dir).map_err(|e| Error::io(&emb_dir, e))?;

    let path = dir.join(TRACKS_FILE);
    let mut w = create(&path)?;
    (|| {
        writeln!(w, "track_id\tartist_id\talbum_id\tpopularity_rank\tgenres")?;
        for (id, m) in bundle.catalog.tracks() {
            writeln!(
                w,
                "{id}\t{}\t{}\t{}\t{}",
                m.artist,
                m.album,
                m.popularity_rank,
                m.genres.join(",")
            )?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(&path, e))?;

    let path = dir.join(PLAYLISTS_FILE);
    let mut w = create(&path)?;
    (|| {
        writeln!(w, "playlist_id\ttracks")?;
        for (id, tracks) in bundle.catalog.playlists() {
            writeln!(w, "{id}\t{}", join(tracks, ","))?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(&path, e))?;

    let path = dir.join(USERS_FILE);
    let mut w = create(&path)?;
    (|| {
        writeln!(w, "user_id\tstatus\tregistration_day\tcountry\tage")?;
        for (u, p) in &bundle.universe.profiles {
            let status = if bundle.universe.is_warm(*u) {
                "warm"
            } else {
                bundle.universe.cold.get(u).map_or("unassigned", |s| s.as_str())
            };
            writeln!(
                w,
                "{u}\t{status}\t{}\t{}\t{}",
                p.registration_day,
                p.country.as_deref().unwrap_or(""),
                p.age.map_or_else(String::new, |a| a.to_string())
            )?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(&path, e))?;

    let path = dir.join(EVENTS_FILE);
    let mut w = create(&path)?;
    (|| {
        writeln!(w, "user_id\tday\tsignal\tkind\tentity_id")?;
        for e in bundle.log.events() {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", e.user, e.day, e.signal, e.kind, e.entity)?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(&path, e))?;

    let path = dir.join(GROUND_TRUTH_FILE);
    let mut w = create(&path)?;
    (|| {
        writeln!(w, "user_id\ttracks")?;
        for (u, t) in &bundle.ground_truth.users {
            writeln!(w, "{u}\t{}", join(t, ","))?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(&path, e))?;

    let mut spaces = Vec::new();
    for (name, s) in &bundle.spaces {
        let tracks = format!("embeddings/{name}.tracks.emb");
        s.tracks.save(dir.join(&tracks))?;
        let users = match &s.users {
            Some(u) => {
                let file = format!("embeddings/{name}.users.emb");
                u.save(dir.join(&file))?;
                Some(file)
            }
            None => None,
        };
        spaces.push(SpaceEntry {
            name: name.clone(),
            dim: s.tracks.dim(),
            tracks,
            users,
            format: EmbeddingFormat::Emb1,
        });
    }
    let manifest = BundleManifest {
        format: FORMAT.into(),
        version: VERSION,
        name: bundle.name.clone(),
        seed: bundle.seed,
        min_listens: bundle.min_listens,
        counts: Some(counts_of(bundle)),
        spaces,
        schema: None,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn read_tables(
    dir: &Path,
    sources: &[TableSource],
    required: &[&str],
    optional: &[&str],
) -> Result<Vec<MappedTable>> {
    sources
        .iter()
        .map(|s| MappedTable::read(dir, s, required, optional))
        .collect()
}

/// Reads and validates a bundle directory, mapping external columns when the manifest
/// carries a schema section.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let manifest = BundleManifest::read(dir)?;
    let schema = manifest.schema.clone().unwrap_or_default();

    let mut tracks: BTreeMap<TrackId, TrackMeta> = BTreeMap::new();
    let mut ranked = true;
    for table in read_tables(dir, &schema.tracks, &["track_id", "artist_id", "album_id"], &["popularity_rank", "genres"])? {
        for row in table.rows() {
            let id = TrackId(row.parse("track_id")?);
            let rank: Option<u32> = row.parse_opt("popularity_rank")?;
            ranked &= rank.is_some();
            let meta = TrackMeta {
                artist: ArtistId(row.parse("artist_id")?),
                album: AlbumId(row.parse("album_id")?),
                genres: row.list("genres").into_iter().map(String::from).collect(),
                popularity_rank: rank.unwrap_or(0),
            };
            if tracks.insert(id, meta).is_some() {
                return Err(Error::parse(&table.file, row.line, format!("duplicate track {id}")));
            }
        }
    }

    let mut playlists: BTreeMap<PlaylistId, Vec<TrackId>> = BTreeMap::new();
    for table in read_tables(dir, &schema.playlists, &["playlist_id"], &["tracks", "track_id"])? {
        for row in table.rows() {
            let id = PlaylistId(row.parse("playlist_id")?);
            let entry = playlists.entry(id).or_default();
            entry.extend(row.parse_list::<u64>("tracks")?.into_iter().map(TrackId));
            if let Some(t) = row.parse_opt::<u64>("track_id")? {
                entry.push(TrackId(t));
            }
        }
    }

    let mut universe = UserUniverse::default();
    for table in read_tables(dir, &schema.users, &["user_id", "status", "registration_day"], &["country", "age"])? {
        for row in table.rows() {
            let u = UserId(row.parse("user_id")?);
            match row.require("status")? {
                "warm" => {
                    universe.warm.insert(u);
                }
                "validation" => {
                    universe.cold.insert(u, Split::Validation);
                }
                "test" => {
                    universe.cold.insert(u, Split::Test);
                }
                other => {
                    return Err(Error::parse(
                        &table.file,
                        row.line,
                        format!("status {other:?} is not warm, validation or test"),
                    ))
                }
            }
            let profile = UserProfile {
                country: row.get("country").map(String::from),
                age: row.parse_opt("age")?,
                registration_day: row.parse("registration_day")?,
            };
            if universe.profiles.insert(u, profile).is_some() {
                return Err(Error::parse(&table.file, row.line, format!("duplicate user {u}")));
            }
        }
    }

    let mut events = Vec::new();
    for table in read_tables(dir, &schema.events, &["user_id", "day", "signal", "kind", "entity_id"], &[])? {
        for row in table.rows() {
            events.push(Event {
                user: UserId(row.parse("user_id")?),
                day: row.parse("day")?,
                signal: row.parse::<Signal>("signal")?,
                kind: row.parse::<EntityKind>("kind")?,
                entity: row.parse("entity_id")?,
            });
        }
    }
    let log = InteractionLog::new(events);

    let mut truth: BTreeMap<UserId, BTreeSet<TrackId>> = BTreeMap::new();
    for table in read_tables(dir, &schema.ground_truth, &["user_id"], &["tracks", "track_id"])? {
        for row in table.rows() {
            let entry = truth.entry(UserId(row.parse("user_id")?)).or_default();
            entry.extend(row.parse_list::<u64>("tracks")?.into_iter().map(TrackId));
            if let Some(t) = row.parse_opt::<u64>("track_id")? {
                entry.insert(TrackId(t));
            }
        }
    }

    if !ranked {
        assign_ranks_from_log(&mut tracks, &log, &universe);
    }
    let catalog = Catalog::new(tracks, playlists)?;

    let mut spaces = BTreeMap::new();
    for s in &manifest.spaces {
        let read = |file: &str| -> Result<EmbeddingTable> {
            let path = dir.join(file);
            let table = match s.format {
                EmbeddingFormat::Emb1 => EmbeddingTable::load(&path)?,
                EmbeddingFormat::Text => {
                    let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                    EmbeddingTable::read_text(std::io::BufReader::new(f))?
                }
            };
            if table.dim() != s.dim {
                return Err(Error::DimensionMismatch {
                    expected: s.dim,
                    got: table.dim(),
                });
            }
            Ok(table)
        };
        let tables = SpaceTables {
            tracks: read(&s.tracks)?,
            users: s.users.as_deref().map(read).transpose()?,
        };
        spaces.insert(s.name.clone(), tables);
    }

    let bundle = DatasetBundle {
        name: manifest.name.clone(),
        seed: manifest.seed,
        min_listens: manifest.min_listens,
        catalog,
        universe,
        log,
        ground_truth: GroundTruth::new(truth),
        spaces,
    };
    bundle.validate()?;
    if let Some(expected) = &manifest.counts {
        let found = counts_of(&bundle);
        if &found != expected {
            return Err(Error::Validation(vec![format!(
                "manifest counts {expected:?} do not match contents {found:?}"
            )]));
        }
    }
    Ok(bundle)
}

/// Ranks tracks by distinct warm listeners, then id, for layouts without a rank column.
pub(crate) fn assign_ranks_from_log(
    tracks: &mut BTreeMap<TrackId, TrackMeta>,
    log: &InteractionLog,
    universe: &UserUniverse,
) {
    let mut listeners: HashMap<TrackId, usize> = HashMap::new();
    for u in &universe.warm {
        for t in log.stream_counts(*u).into_keys() {
            *listeners.entry(t).or_insert(0) += 1;
        }
    }
    let mut order: Vec<TrackId> = tracks.keys().copied().collect();
    order.sort_by(|a, b| {
        let ca = listeners.get(a).copied().unwrap_or(0);
        let cb = listeners.get(b).copied().unwrap_or(0);
        cb.cmp(&ca).then(a.cmp(b))
    });
    for (i, t) in order.into_iter().enumerate() {
        if let Some(m) = tracks.get_mut(&t) {
            m.popularity_rank = i as u32 + 1;
        }
    }
}
