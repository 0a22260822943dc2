use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::io::assign_ranks_from_log;
use super::{DatasetBundle, SpaceTables};
use crate::catalog::{Catalog, Split, TrackMeta, UserProfile, UserUniverse};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::ids::{AlbumId, ArtistId, PlaylistId, TrackId, UserId};
use crate::interactions::{EntityKind, Event, InteractionLog, Signal};

/// Name of the embedding space written by the generator: genre centroids plus noise.
pub const PLANTED_SPACE: &str = "planted";

const COUNTRY_CODES: [&str; 12] = [
    "FR", "DE", "BR", "US", "GB", "MX", "ES", "IT", "CO", "CA", "BE", "AT",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub genres: usize,
    pub tracks: usize,
    pub warm_users: usize,
    pub cold_users: usize,
    /// Share of cold users placed in the validation split; the rest are test users.
    pub validation_fraction: f64,
    pub dim: usize,
    pub countries: usize,
    pub artists_per_genre: usize,
    pub albums_per_artist: usize,
    pub playlists_per_genre: usize,
    pub playlist_len: usize,
    /// Mixture weight of each user's secondary genre.
    pub secondary_weight: f64,
    /// Mixture weight spread evenly over all genres; the primary genre gets the rest.
    pub noise: f64,
    /// Probability that the primary genre follows the user's country.
    pub country_affinity: f64,
    /// Probability that the primary genre follows the user's age class.
    pub age_affinity: f64,
    pub country_unknown_rate: f64,
    pub age_unknown_rate: f64,
    /// Exponent of the within-genre popularity power law.
    pub zipf_exponent: f64,
    /// Exponent of the power law over genre sizes in listening.
    pub genre_skew: f64,
    /// Mean number of registration-day events (Poisson).
    pub registration_events_mean: f64,
    /// Relative frequencies of stream, skip, ban, search, favorite, onboarding.
    pub signal_mix: [f64; 6],
    /// Mean number of streams in a warm user's later history (Poisson).
    pub warm_history_mean: f64,
    /// Mean number of listens in a cold user's 30 days after registration (Poisson).
    pub ground_truth_listens_mean: f64,
    pub min_listens: usize,
    /// Standard deviation of the per-track offset from its genre centroid.
    pub embedding_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            genres: 10,
            tracks: 2000,
            warm_users: 5000,
            cold_users: 1000,
            validation_fraction: 0.2,
            dim: 32,
            countries: 8,
            artists_per_genre: 20,
            albums_per_artist: 2,
            playlists_per_genre: 10,
            playlist_len: 20,
            secondary_weight: 0.2,
            noise: 0.1,
            country_affinity: 0.5,
            age_affinity: 0.2,
            country_unknown_rate: 0.05,
            age_unknown_rate: 0.1,
            zipf_exponent: 1.0,
            genre_skew: 0.5,
            registration_events_mean: 3.0,
            signal_mix: [0.5, 0.12, 0.03, 0.1, 0.1, 0.15],
            warm_history_mean: 60.0,
            ground_truth_listens_mean: 150.0,
            min_listens: 20,
            embedding_noise: 0.35,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.genres < 2 {
            p.push("need at least two genres".to_string());
        }
        if self.tracks < self.genres || !self.tracks.is_multiple_of(self.genres) {
            p.push("track count must be a positive multiple of the genre count".into());
        }
        if self.dim == 0 || self.warm_users == 0 || self.countries == 0 {
            p.push("dimension, warm users and countries must be >= 1".into());
        }
        if self.artists_per_genre == 0 || self.albums_per_artist == 0 {
            p.push("artists and albums per genre must be >= 1".into());
        }
        if self.playlist_len == 0 && self.playlists_per_genre > 0 {
            p.push("playlists need at least one track".into());
        }
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        for (name, v) in [
            ("validation_fraction", self.validation_fraction),
            ("country_affinity", self.country_affinity),
            ("age_affinity", self.age_affinity),
            ("country_unknown_rate", self.country_unknown_rate),
            ("age_unknown_rate", self.age_unknown_rate),
        ] {
            if !prob(v) {
                p.push(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.country_affinity + self.age_affinity > 1.0 {
            p.push("country_affinity + age_affinity must not exceed 1".into());
        }
        if self.secondary_weight < 0.0 || self.noise < 0.0 || self.secondary_weight + self.noise > 1.0 {
            p.push("secondary_weight and noise must be >= 0 and sum to at most 1".into());
        }
        if self.signal_mix.iter().any(|w| *w < 0.0) || self.signal_mix.iter().sum::<f64>() <= 0.0 {
            p.push("signal_mix needs nonnegative weights with a positive sum".into());
        }
        for (name, v) in [
            ("registration_events_mean", self.registration_events_mean),
            ("warm_history_mean", self.warm_history_mean),
            ("ground_truth_listens_mean", self.ground_truth_listens_mean),
        ] {
            if !(v > 0.0) {
                p.push(format!("{name} must be positive"));
            }
        }
        if !(self.embedding_noise >= 0.0) || !(self.zipf_exponent >= 0.0) || !(self.genre_skew >= 0.0) {
            p.push("noise and exponents must be nonnegative".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(p.join("; ")))
        }
    }

    fn tracks_per_genre(&self) -> usize {
        self.tracks / self.genres
    }
}

/// What the generator planted, for oracle checks.
#[derive(Clone, Debug, PartialEq)]
pub struct Planted {
    /// Genre weights of every user.
    pub mixtures: BTreeMap<UserId, Vec<f64>>,
    pub track_genre: BTreeMap<TrackId, usize>,
    /// Within-genre sampling weight of every track (sums to one per genre).
    pub track_weight: BTreeMap<TrackId, f64>,
}

impl Planted {
    /// Probability that one listen of `user` is `track`.
    pub fn listen_probability(&self, user: UserId, track: TrackId) -> f64 {
        match (
            self.mixtures.get(&user),
            self.track_genre.get(&track),
            self.track_weight.get(&track),
        ) {
            (Some(m), Some(&g), Some(&w)) => m[g] * w,
            _ => 0.0,
        }
    }
}

pub struct SyntheticDataset {
    pub bundle: DatasetBundle,
    pub planted: Planted,
}

struct World {
    cfg: SyntheticConfig,
    /// Track ids by genre, most popular first.
    genre_tracks: Vec<Vec<TrackId>>,
    genre_sampler: Vec<WeightedIndex<f64>>,
    genre_weights: Vec<f64>,
    genre_playlists: Vec<Vec<PlaylistId>>,
    meta: BTreeMap<TrackId, TrackMeta>,
    country_weights: WeightedIndex<f64>,
    signal_sampler: WeightedIndex<f64>,
}

const AGE_BUCKETS: [(u32, u32); 5] = [(14, 17), (18, 24), (25, 34), (35, 49), (50, 75)];

impl World {
    fn country_genres(&self, c: usize) -> [usize; 2] {
        let g = self.cfg.genres;
        [c % g, (c * 3 + 1) % g]
    }

    fn age_genre(&self, age: u32) -> usize {
        let bucket = AGE_BUCKETS.iter().position(|(lo, hi)| age >= *lo && age <= *hi).unwrap_or(0);
        (self.cfg.genres - 1 - bucket % self.cfg.genres) % self.cfg.genres
    }

    fn draw_genre_global(&self, rng: &mut ChaCha8Rng, exclude: Option<usize>) -> usize {
        let weights: Vec<f64> = self
            .genre_weights
            .iter()
            .enumerate()
            .map(|(g, w)| if Some(g) == exclude { 0.0 } else { *w })
            .collect();
        WeightedIndex::new(&weights).expect("positive weights").sample(rng)
    }

    fn draw_track_in(&self, rng: &mut ChaCha8Rng, genre: usize) -> TrackId {
        self.genre_tracks[genre][self.genre_sampler[genre].sample(rng)]
    }

    fn new_user(&self, rng: &mut ChaCha8Rng) -> (UserProfile, Vec<f64>) {
        let cfg = &self.cfg;
        let country_idx = self.country_weights.sample(rng);
        let country_known = !rng.random_bool(cfg.country_unknown_rate);
        let age: u32 = rng.random_range(14..=75);
        let age_known = !rng.random_bool(cfg.age_unknown_rate);
        let u: f64 = rng.random();
        let primary = if u < cfg.country_affinity {
            self.country_genres(country_idx)[rng.random_range(0..2)]
        } else if u < cfg.country_affinity + cfg.age_affinity {
            self.age_genre(age)
        } else {
            self.draw_genre_global(rng, None)
        };
        let secondary = self.draw_genre_global(rng, Some(primary));
        let mut mixture = vec![cfg.noise / cfg.genres as f64; cfg.genres];
        mixture[primary] += 1.0 - cfg.secondary_weight - cfg.noise;
        mixture[secondary] += cfg.secondary_weight;
        let profile = UserProfile {
            country: country_known.then(|| country_code(country_idx)),
            age: age_known.then_some(age),
            registration_day: 0,
        };
        (profile, mixture)
    }

    fn draw_listen(&self, rng: &mut ChaCha8Rng, mixture: &WeightedIndex<f64>) -> TrackId {
        let g = mixture.sample(rng);
        self.draw_track_in(rng, g)
    }

    fn registration_events(
        &self,
        rng: &mut ChaCha8Rng,
        user: UserId,
        day: i64,
        mixture: &[f64],
    ) -> Vec<Event> {
        let cfg = &self.cfg;
        let sampler = WeightedIndex::new(mixture).expect("valid mixture");
        let n = poisson(rng, cfg.registration_events_mean);
        let disliked: Vec<usize> = {
            let mut order: Vec<usize> = (0..cfg.genres).collect();
            order.sort_by(|a, b| mixture[*a].total_cmp(&mixture[*b]).then(a.cmp(b)));
            order.truncate((cfg.genres / 2).max(1));
            order
        };
        let mut events = Vec::with_capacity(n);
        for _ in 0..n {
            let signal = [
                Signal::Stream,
                Signal::Skip,
                Signal::Ban,
                Signal::Search,
                Signal::Favorite,
                Signal::Onboarding,
            ][self.signal_sampler.sample(rng)];
            let (kind, entity) = match signal {
                Signal::Stream => (EntityKind::Track, self.draw_listen(rng, &sampler).0),
                Signal::Skip | Signal::Ban => {
                    let g = disliked[rng.random_range(0..disliked.len())];
                    (EntityKind::Track, self.draw_track_in(rng, g).0)
                }
                Signal::Onboarding => {
                    let t = self.draw_listen(rng, &sampler);
                    (EntityKind::Artist, self.meta[&t].artist.0)
                }
                Signal::Search | Signal::Favorite => {
                    let g = sampler.sample(rng);
                    let t = self.draw_track_in(rng, g);
                    let u: f64 = rng.random();
                    if u < 0.4 {
                        (EntityKind::Track, t.0)
                    } else if u < 0.65 {
                        (EntityKind::Artist, self.meta[&t].artist.0)
                    } else if u < 0.85 || self.genre_playlists[g].is_empty() {
                        (EntityKind::Album, self.meta[&t].album.0)
                    } else {
                        let p = &self.genre_playlists[g];
                        (EntityKind::Playlist, p[rng.random_range(0..p.len())].0)
                    }
                }
            };
            events.push(Event {
                user,
                day,
                signal,
                kind,
                entity,
            });
        }
        events
    }
}

fn country_code(i: usize) -> String {
    COUNTRY_CODES
        .get(i)
        .map_or_else(|| format!("C{i}"), |c| c.to_string())
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

fn power_weights(n: usize, exponent: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|i| 1.0 / ((i + 1) as f64).powf(exponent)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Users are ids `1..=warm`, cold users follow. Warm users register on days
/// `0..60` and stream for 90 days afterwards; cold users register on days `200..230`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let g_count = cfg.genres;
    let per_genre = cfg.tracks_per_genre();
    let within = power_weights(per_genre, cfg.zipf_exponent);

    let centroids: Vec<Vec<f64>> = (0..g_count)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();

    let mut meta = BTreeMap::new();
    let mut genre_tracks = vec![Vec::with_capacity(per_genre); g_count];
    let mut planted_genre = BTreeMap::new();
    let mut planted_weight = BTreeMap::new();
    let mut track_rows = Vec::with_capacity(cfg.tracks);
    let scale = cfg.embedding_noise / (cfg.dim as f64).sqrt();
    for g in 0..g_count {
        for p in 0..per_genre {
            let id = TrackId((g * per_genre + p + 1) as u64);
            let a = p % cfg.artists_per_genre;
            let artist = (g * cfg.artists_per_genre + a) as u64 + 1;
            let album_slot = (p / cfg.artists_per_genre) % cfg.albums_per_artist;
            let album = (artist - 1) * cfg.albums_per_artist as u64 + album_slot as u64 + 1;
            meta.insert(
                id,
                TrackMeta {
                    artist: ArtistId(artist),
                    album: AlbumId(album),
                    genres: vec![format!("genre-{g:02}")],
                    popularity_rank: 0,
                },
            );
            genre_tracks[g].push(id);
            planted_genre.insert(id, g);
            planted_weight.insert(id, within[p]);
            let v: Vec<f64> = centroids[g]
                .iter()
                .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            track_rows.push((id.0, v));
        }
    }
    let genre_sampler: Vec<WeightedIndex<f64>> = (0..g_count)
        .map(|_| WeightedIndex::new(&within).expect("positive weights"))
        .collect();

    let mut playlists = BTreeMap::new();
    let mut genre_playlists = vec![Vec::new(); g_count];
    let mut next_playlist = 1u64;
    for g in 0..g_count {
        for _ in 0..cfg.playlists_per_genre {
            let mut chosen = BTreeSet::new();
            let target = cfg.playlist_len.min(per_genre);
            while chosen.len() < target {
                chosen.insert(genre_tracks[g][genre_sampler[g].sample(&mut rng)]);
            }
            let mut list: Vec<TrackId> = chosen.into_iter().collect();
            list.shuffle(&mut rng);
            let id = PlaylistId(next_playlist);
            next_playlist += 1;
            playlists.insert(id, list);
            genre_playlists[g].push(id);
        }
    }

    let world = World {
        cfg: cfg.clone(),
        genre_tracks,
        genre_sampler,
        genre_weights: power_weights(g_count, cfg.genre_skew),
        genre_playlists,
        meta,
        country_weights: WeightedIndex::new(power_weights(cfg.countries, 0.7)).expect("weights"),
        signal_sampler: WeightedIndex::new(cfg.signal_mix).expect("validated"),
    };

    let mut universe = UserUniverse::default();
    let mut events = Vec::new();
    let mut mixtures = BTreeMap::new();
    for i in 0..cfg.warm_users {
        let user = UserId(i as u64 + 1);
        let (mut profile, mixture) = world.new_user(&mut rng);
        profile.registration_day = rng.random_range(0..60);
        let day = profile.registration_day;
        events.extend(world.registration_events(&mut rng, user, day, &mixture));
        let sampler = WeightedIndex::new(&mixture).expect("valid mixture");
        let n = poisson(&mut rng, cfg.warm_history_mean).max(1);
        for _ in 0..n {
            let d = day + rng.random_range(1..=90);
            events.push(Event::stream(user, d, world.draw_listen(&mut rng, &sampler)));
        }
        for _ in 0..poisson(&mut rng, 2.0) {
            let d = day + rng.random_range(1..=90);
            let t = world.draw_listen(&mut rng, &sampler);
            events.push(Event {
                user,
                day: d,
                signal: Signal::Favorite,
                kind: EntityKind::Track,
                entity: t.0,
            });
        }
        universe.warm.insert(user);
        universe.profiles.insert(user, profile);
        mixtures.insert(user, mixture);
    }

    let mut cold_ids: Vec<UserId> = (0..cfg.cold_users)
        .map(|i| UserId((cfg.warm_users + i) as u64 + 1))
        .collect();
    let mut truth = BTreeMap::new();
    for &user in &cold_ids {
        let (mut profile, mixture) = world.new_user(&mut rng);
        profile.registration_day = 200 + rng.random_range(0..30);
        events.extend(world.registration_events(&mut rng, user, profile.registration_day, &mixture));
        let sampler = WeightedIndex::new(&mixture).expect("valid mixture");
        let listens = poisson(&mut rng, cfg.ground_truth_listens_mean);
        let set: BTreeSet<TrackId> = (0..listens)
            .map(|_| world.draw_listen(&mut rng, &sampler))
            .collect();
        truth.insert(user, set);
        universe.profiles.insert(user, profile);
        mixtures.insert(user, mixture);
    }
    cold_ids.shuffle(&mut rng);
    let n_val = (cfg.validation_fraction * cfg.cold_users as f64).round() as usize;
    for (i, u) in cold_ids.iter().enumerate() {
        let split = if i < n_val {
            Split::Validation
        } else {
            Split::Test
        };
        universe.cold.insert(*u, split);
    }

    let log = InteractionLog::new(events);
    let mut meta = world.meta;
    assign_ranks_from_log(&mut meta, &log, &universe);
    let catalog = Catalog::new(meta, playlists)?;
    let tracks = EmbeddingTable::from_rows(cfg.dim, track_rows)?.rounded_to_f32();
    let mut spaces = BTreeMap::new();
    spaces.insert(
        PLANTED_SPACE.to_string(),
        SpaceTables {
            tracks,
            users: None,
        },
    );
    let bundle = DatasetBundle {
        name: format!("synthetic-g{}-s{}", cfg.genres, cfg.seed),
        seed: Some(cfg.seed),
        min_listens: cfg.min_listens,
        catalog,
        universe,
        log,
        ground_truth: GroundTruth::new(truth),
        spaces,
    };
    bundle.validate()?;
    Ok(SyntheticDataset {
        bundle,
        planted: Planted {
            mixtures,
            track_genre: planted_genre,
            track_weight: planted_weight,
        },
    })
}
