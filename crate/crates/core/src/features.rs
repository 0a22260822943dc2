//! Fixed-size input vectors built from demographics and registration-day interactions.
//!
//! Layout, in order: one `dim`-wide block per interaction channel (mean vector of the
//! entities touched by that signal at that entity level), a country block and an age
//! block (mean vectors of warm users in the same group), then scalars: one log1p event
//! count per channel, the normalized age, and missing-data indicators.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::catalog::{UserProfile, UserUniverse};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ids::UserId;
use crate::interactions::{EntityKind, Event, InteractionLog, Signal};
use crate::par;
use crate::trainers::EntityEmbeddings;

pub const CHANNEL_SPEC_VERSION: u32 = 1;
const MANIFEST_HEADER: &str = "coldstart-channel-spec";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeClass {
    #[serde(rename = "<18")]
    Under18,
    #[serde(rename = "18-24")]
    From18To24,
    #[serde(rename = "25-34")]
    From25To34,
    #[serde(rename = "35-49")]
    From35To49,
    #[serde(rename = "50+")]
    Over50,
    #[serde(rename = "unknown")]
    Unknown,
}

impl AgeClass {
    pub const ALL: [AgeClass; 6] = [
        AgeClass::Under18,
        AgeClass::From18To24,
        AgeClass::From25To34,
        AgeClass::From35To49,
        AgeClass::Over50,
        AgeClass::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgeClass::Under18 => "<18",
            AgeClass::From18To24 => "18-24",
            AgeClass::From25To34 => "25-34",
            AgeClass::From35To49 => "35-49",
            AgeClass::Over50 => "50+",
            AgeClass::Unknown => "unknown",
        }
    }
}

impl std::str::FromStr for AgeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgeClass::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown age class `{s}`")))
    }
}

impl fmt::Display for AgeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn age_class(age: Option<u32>) -> AgeClass {
    match age {
        None => AgeClass::Unknown,
        Some(a) if a < 18 => AgeClass::Under18,
        Some(a) if a <= 24 => AgeClass::From18To24,
        Some(a) if a <= 34 => AgeClass::From25To34,
        Some(a) if a <= 49 => AgeClass::From35To49,
        Some(_) => AgeClass::Over50,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Channel {
    pub signal: Signal,
    pub kind: EntityKind,
}

/// Ordered, versioned description of the feature layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub version: u32,
    pub dim: usize,
    pub channels: Vec<Channel>,
}

/// Names of the trailing scalars after the per-channel counts.
const EXTRA_SCALARS: [&str; 6] = [
    "age",
    "age_unknown",
    "country_unknown",
    "no_interactions",
    "no_streams",
    "no_onboarding",
];

impl ChannelSpec {
    /// Every interaction signal at every entity level, then onboarding artist picks.
    pub fn standard(dim: usize) -> Self {
        let mut channels = Vec::new();
        for signal in [
            Signal::Stream,
            Signal::Skip,
            Signal::Ban,
            Signal::Search,
            Signal::Favorite,
        ] {
            for kind in EntityKind::ALL {
                channels.push(Channel { signal, kind });
            }
        }
        channels.push(Channel {
            signal: Signal::Onboarding,
            kind: EntityKind::Artist,
        });
        ChannelSpec {
            version: CHANNEL_SPEC_VERSION,
            dim,
            channels,
        }
    }

    pub fn embedding_blocks(&self) -> usize {
        self.channels.len() + 2
    }

    pub fn scalar_count(&self) -> usize {
        self.channels.len() + EXTRA_SCALARS.len()
    }

    pub fn total_dim(&self) -> usize {
        self.embedding_blocks() * self.dim + self.scalar_count()
    }

    pub fn scalar_names(&self) -> Vec<String> {
        self.channels
            .iter()
            .map(|c| format!("count:{}:{}", c.signal, c.kind))
            .chain(EXTRA_SCALARS.iter().map(|s| s.to_string()))
            .collect()
    }

    pub fn write_manifest<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MANIFEST_HEADER} v{}", self.version)?;
        writeln!(w, "dim={}", self.dim)?;
        for c in &self.channels {
            writeln!(w, "channel={}:{}", c.signal, c.kind)?;
        }
        writeln!(w, "demographic=country")?;
        writeln!(w, "demographic=age")?;
        for s in self.scalar_names() {
            writeln!(w, "scalar={s}")?;
        }
        writeln!(w, "total_dim={}", self.total_dim())
    }

    pub fn to_manifest(&self) -> String {
        let mut buf = Vec::new();
        self.write_manifest(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn parse_manifest<R: BufRead>(r: R) -> Result<Self> {
        let what = "channel spec";
        let mut lines = r.lines().enumerate();
        let header = match lines.next() {
            Some((_, Ok(l))) => l,
            _ => return Err(Error::Truncated { what: "channel spec" }),
        };
        let version: u32 = header
            .strip_prefix(MANIFEST_HEADER)
            .and_then(|v| v.trim().strip_prefix('v'))
            .and_then(|v| v.parse().ok())
            .ok_or(Error::BadMagic {
                what: "channel spec",
                expected: MANIFEST_HEADER,
            })?;
        if version != CHANNEL_SPEC_VERSION {
            return Err(Error::VersionMismatch {
                what: "channel spec",
                found: version,
            });
        }
        let mut dim = None;
        let mut channels = Vec::new();
        let mut total = None;
        for (n, line) in lines {
            let line = line.map_err(|e| Error::parse(what, n + 1, e.to_string()))?;
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            match key {
                "dim" => dim = value.parse().ok(),
                "channel" => {
                    let (s, k) = value
                        .split_once(':')
                        .ok_or_else(|| Error::parse(what, n + 1, "expected signal:kind"))?;
                    channels.push(Channel {
                        signal: s.parse()?,
                        kind: k.parse()?,
                    });
                }
                "total_dim" => total = value.parse::<usize>().ok(),
                _ => {}
            }
        }
        let spec = ChannelSpec {
            version,
            dim: dim.ok_or_else(|| Error::parse(what, 0, "missing dim"))?,
            channels,
        };
        if let Some(t) = total {
            if t != spec.total_dim() {
                return Err(Error::DimensionMismatch {
                    expected: spec.total_dim(),
                    got: t,
                });
            }
        }
        Ok(spec)
    }
}

/// Mean warm-user vectors per country and per age class.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupEmbeddings {
    pub dim: usize,
    pub countries: BTreeMap<String, Vec<f64>>,
    pub ages: BTreeMap<AgeClass, Vec<f64>>,
    pub fallback: Vec<f64>,
}

pub const DEFAULT_MIN_GROUP_SIZE: usize = 10;

impl GroupEmbeddings {
    /// Groups with fewer than `min_group_size` members are left out and resolve to the
    /// global mean.
    pub fn fit(
        warm: &[UserId],
        embeddings: &EmbeddingTable,
        universe: &UserUniverse,
        min_group_size: usize,
    ) -> Result<Self> {
        let dim = embeddings.dim();
        let mut fallback = vec![0.0; dim];
        let mut by_country: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        let mut by_age: BTreeMap<AgeClass, (Vec<f64>, usize)> = BTreeMap::new();
        let mut n = 0usize;
        for &u in warm {
            let Some(v) = embeddings.get(u.0) else {
                continue;
            };
            let profile = universe.profile(u);
            n += 1;
            add(&mut fallback, v);
            if let Some(c) = profile.and_then(|p| p.country.clone()) {
                let e = by_country.entry(c).or_insert_with(|| (vec![0.0; dim], 0));
                add(&mut e.0, v);
                e.1 += 1;
            }
            let class = age_class(profile.and_then(|p| p.age));
            if class != AgeClass::Unknown {
                let e = by_age.entry(class).or_insert_with(|| (vec![0.0; dim], 0));
                add(&mut e.0, v);
                e.1 += 1;
            }
        }
        if n == 0 {
            return Err(Error::InvalidConfig(
                "group embeddings need at least one embedded warm user".into(),
            ));
        }
        fallback.iter_mut().for_each(|x| *x /= n as f64);
        let finish = |(mut sum, count): (Vec<f64>, usize)| {
            (count >= min_group_size.max(1)).then(|| {
                sum.iter_mut().for_each(|x| *x /= count as f64);
                sum
            })
        };
        Ok(GroupEmbeddings {
            dim,
            countries: by_country
                .into_iter()
                .filter_map(|(k, v)| finish(v).map(|v| (k, v)))
                .collect(),
            ages: by_age
                .into_iter()
                .filter_map(|(k, v)| finish(v).map(|v| (k, v)))
                .collect(),
            fallback,
        })
    }

    /// The country vector, or `None` when the fallback applies.
    pub fn country(&self, country: Option<&str>) -> Option<&[f64]> {
        country.and_then(|c| self.countries.get(c)).map(Vec::as_slice)
    }

    pub fn age(&self, class: AgeClass) -> Option<&[f64]> {
        self.ages.get(&class).map(Vec::as_slice)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let row = |w: &mut W, kind: &str, key: &str, v: &[f64]| -> std::io::Result<()> {
            let vals: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            writeln!(w, "{kind}\t{key}\t{}", vals.join(","))
        };
        writeln!(w, "dim\t{}", self.dim)?;
        row(&mut w, "fallback", "-", &self.fallback)?;
        for (k, v) in &self.countries {
            row(&mut w, "country", k, v)?;
        }
        for (k, v) in &self.ages {
            row(&mut w, "age", k.as_str(), v)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let what = "group embeddings";
        let mut g = GroupEmbeddings {
            dim: 0,
            countries: BTreeMap::new(),
            ages: BTreeMap::new(),
            fallback: Vec::new(),
        };
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(what, n + 1, e.to_string()))?;
            let parts: Vec<&str> = line.split('\t').collect();
            match parts.as_slice() {
                ["dim", d] => {
                    g.dim = d.parse().map_err(|_| Error::parse(what, n + 1, "bad dim"))?
                }
                [kind, key, vals] => {
                    let v = vals
                        .split(',')
                        .map(|x| x.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::parse(what, n + 1, "bad value"))?;
                    if v.len() != g.dim {
                        return Err(Error::DimensionMismatch {
                            expected: g.dim,
                            got: v.len(),
                        });
                    }
                    match *kind {
                        "fallback" => g.fallback = v,
                        "country" => {
                            g.countries.insert(key.to_string(), v);
                        }
                        "age" => {
                            g.ages.insert(key.parse()?, v);
                        }
                        _ => return Err(Error::parse(what, n + 1, "unknown group kind")),
                    }
                }
                [""] => {}
                _ => return Err(Error::parse(what, n + 1, "expected 3 fields")),
            }
        }
        if g.fallback.len() != g.dim {
            return Err(Error::parse(what, 0, "missing fallback vector"));
        }
        Ok(g)
    }
}

fn add(acc: &mut [f64], v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += x;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub version: u32,
}

/// Builds the input vector of one user. Every event must be dated on the user's
/// registration day; a later event is rejected to keep future behavior out of the inputs.
pub fn assemble_features(
    user: UserId,
    profile: &UserProfile,
    events: &[Event],
    entities: &EntityEmbeddings,
    groups: &GroupEmbeddings,
    spec: &ChannelSpec,
) -> Result<FeatureVector> {
    if entities.dim() != spec.dim || groups.dim != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            got: if entities.dim() != spec.dim {
                entities.dim()
            } else {
                groups.dim
            },
        });
    }
    for e in events {
        if e.day > profile.registration_day {
            return Err(Error::LeakageGuard {
                user: user.0,
                day: e.day,
                registration_day: profile.registration_day,
            });
        }
        if e.day < profile.registration_day || e.user != user {
            return Err(Error::Validation(vec![format!(
                "event {e:?} does not belong to the registration day of user {user}"
            )]));
        }
    }
    let d = spec.dim;
    let mut values = Vec::with_capacity(spec.total_dim());
    let mut counts = Vec::with_capacity(spec.channels.len());
    for ch in &spec.channels {
        let table = entities.table(ch.kind);
        let mut acc = vec![0.0; d];
        let mut hits = 0usize;
        let mut touched = 0usize;
        for e in events
            .iter()
            .filter(|e| e.signal == ch.signal && e.kind == ch.kind)
        {
            touched += 1;
            if let Some(v) = table.get(e.entity) {
                add(&mut acc, v);
                hits += 1;
            }
        }
        if hits > 0 {
            acc.iter_mut().for_each(|x| *x /= hits as f64);
        }
        values.extend_from_slice(&acc);
        counts.push(touched);
    }
    let country = groups.country(profile.country.as_deref());
    values.extend_from_slice(country.unwrap_or(&groups.fallback));
    let class = age_class(profile.age);
    values.extend_from_slice(groups.age(class).unwrap_or(&groups.fallback));

    values.extend(counts.iter().map(|&c| (c as f64).ln_1p()));
    let age = profile.age.map_or(0.0, |a| (a as f64 / 100.0).clamp(0.0, 1.0));
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let has = |s: Signal| events.iter().any(|e| e.signal == s);
    values.push(age);
    values.push(flag(profile.age.is_none()));
    values.push(flag(country.is_none()));
    values.push(flag(events.is_empty()));
    values.push(flag(!has(Signal::Stream)));
    values.push(flag(!has(Signal::Onboarding)));
    debug_assert_eq!(values.len(), spec.total_dim());
    Ok(FeatureVector {
        values,
        version: spec.version,
    })
}

/// Registration-day events of `user`. With `strict`, every logged event of the user is
/// returned so that `assemble_features` can reject anything dated later; otherwise the
/// log is sliced to the registration day (warm users have longer histories).
pub fn registration_events<'a>(
    log: &'a InteractionLog,
    user: UserId,
    profile: &UserProfile,
    strict: bool,
) -> &'a [Event] {
    if strict {
        log.for_user(user)
    } else {
        log.on_day(user, profile.registration_day)
    }
}

/// Feature rows for `users`, keyed by user id. `strict` as in [`registration_events`].
pub fn build_feature_table(
    users: &[UserId],
    universe: &UserUniverse,
    log: &InteractionLog,
    entities: &EntityEmbeddings,
    groups: &GroupEmbeddings,
    spec: &ChannelSpec,
    strict: bool,
) -> Result<EmbeddingTable> {
    let rows = par::map_slice(users, |&u| -> Result<Vec<f64>> {
        let profile = universe
            .profile(u)
            .ok_or_else(|| Error::Validation(vec![format!("user {u} has no demographics")]))?;
        let events = registration_events(log, u, profile, strict);
        Ok(assemble_features(u, profile, events, entities, groups, spec)?.values)
    });
    let mut ids = Vec::with_capacity(users.len());
    let mut data = Vec::with_capacity(users.len() * spec.total_dim());
    for (u, r) in users.iter().zip(rows) {
        ids.push(u.0);
        data.extend(r?);
    }
    EmbeddingTable::from_flat(spec.total_dim(), ids, data)
}
