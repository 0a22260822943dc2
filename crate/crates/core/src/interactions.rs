use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::ids::{TrackId, UserId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Stream,
    Skip,
    Ban,
    Search,
    Favorite,
    Onboarding,
}

impl Signal {
    pub const ALL: [Signal; 6] = [
        Signal::Stream,
        Signal::Skip,
        Signal::Ban,
        Signal::Search,
        Signal::Favorite,
        Signal::Onboarding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Signal::Stream => "stream",
            Signal::Skip => "skip",
            Signal::Ban => "ban",
            Signal::Search => "search",
            Signal::Favorite => "favorite",
            Signal::Onboarding => "onboarding",
        }
    }
}

impl FromStr for Signal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Signal::ALL
            .into_iter()
            .find(|sig| sig.as_str() == s)
            .ok_or_else(|| Error::UnknownSignal(s.to_string()))
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Track,
    Artist,
    Album,
    Playlist,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [
        EntityKind::Track,
        EntityKind::Artist,
        EntityKind::Album,
        EntityKind::Playlist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Track => "track",
            EntityKind::Artist => "artist",
            EntityKind::Album => "album",
            EntityKind::Playlist => "playlist",
        }
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        EntityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownEntityKind(s.to_string()))
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One user interaction. Repeated interactions are repeated events.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Event {
    pub user: UserId,
    pub day: i64,
    pub signal: Signal,
    pub kind: EntityKind,
    pub entity: u64,
}

impl Event {
    pub fn stream(user: UserId, day: i64, track: TrackId) -> Self {
        Event {
            user,
            day,
            signal: Signal::Stream,
            kind: EntityKind::Track,
            entity: track.0,
        }
    }

    pub fn track(&self) -> Option<TrackId> {
        (self.kind == EntityKind::Track).then_some(TrackId(self.entity))
    }
}

/// Events sorted by `(user, day, signal, kind, entity)` with a per-user index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    events: Vec<Event>,
    by_user: BTreeMap<UserId, Range<usize>>,
}

impl InteractionLog {
    pub fn new(mut events: Vec<Event>) -> Self {
        events.sort_unstable();
        let mut by_user = BTreeMap::new();
        let mut start = 0;
        for i in 1..=events.len() {
            if i == events.len() || events[i].user != events[start].user {
                by_user.insert(events[start].user, start..i);
                start = i;
            }
        }
        InteractionLog { events, by_user }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.by_user.keys().copied()
    }

    pub fn for_user(&self, user: UserId) -> &[Event] {
        match self.by_user.get(&user) {
            Some(r) => &self.events[r.clone()],
            None => &[],
        }
    }

    /// Events of `user` that happened on `day`.
    pub fn on_day(&self, user: UserId, day: i64) -> &[Event] {
        let evs = self.for_user(user);
        let lo = evs.partition_point(|e| e.day < day);
        let hi = evs.partition_point(|e| e.day <= day);
        &evs[lo..hi]
    }

    /// Stream counts per track for `user`, in track-id order.
    pub fn stream_counts(&self, user: UserId) -> BTreeMap<TrackId, u32> {
        let mut out = BTreeMap::new();
        for e in self.for_user(user) {
            if e.signal == Signal::Stream {
                if let Some(t) = e.track() {
                    *out.entry(t).or_insert(0) += 1;
                }
            }
        }
        out
    }

    /// A log restricted to the given users.
    pub fn restrict<F: Fn(UserId) -> bool>(&self, keep: F) -> InteractionLog {
        InteractionLog::new(
            self.events
                .iter()
                .filter(|e| keep(e.user))
                .copied()
                .collect(),
        )
    }
}
