use std::path::Path;

use coldstart_core::dataset::{load_bundle, DatasetBundle};
use coldstart_core::features::{assemble_features, build_feature_table, ChannelSpec, GroupEmbeddings};
use coldstart_core::trainers::{warm_user_table, EntityEmbeddings, HistoryWeighting};
use coldstart_core::{EmbeddingTable, Error, Event, EntityKind, Signal, UserId};

fn tiny() -> DatasetBundle {
    load_bundle(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny")).unwrap()
}

fn track_vectors() -> EmbeddingTable {
    EmbeddingTable::from_rows(
        2,
        [
            (1, vec![1.0, 0.0]),
            (2, vec![0.0, 1.0]),
            (3, vec![1.0, 1.0]),
            (4, vec![2.0, 0.0]),
            (5, vec![0.0, 2.0]),
            (6, vec![2.0, 2.0]),
        ],
    )
    .unwrap()
}

struct Setup {
    bundle: DatasetBundle,
    entities: EntityEmbeddings,
    groups: GroupEmbeddings,
    spec: ChannelSpec,
}

fn setup() -> Setup {
    let bundle = tiny();
    let tracks = track_vectors();
    let (warm, _) = warm_user_table(&bundle.warm_users(), &bundle.log, &tracks, HistoryWeighting::StreamCount).unwrap();
    let entities = EntityEmbeddings::derive(tracks, &bundle.catalog).unwrap();
    let groups = GroupEmbeddings::fit(&bundle.warm_users(), &warm, &bundle.universe, 1).unwrap();
    Setup {
        bundle,
        entities,
        groups,
        spec: ChannelSpec::standard(2),
    }
}

fn close(a: &[f64], b: &[f64]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
    }
}

fn channel(spec: &ChannelSpec, signal: Signal, kind: EntityKind) -> usize {
    spec.channels
        .iter()
        .position(|c| c.signal == signal && c.kind == kind)
        .unwrap()
}

#[test]
fn entity_vectors_are_member_means() {
    let s = setup();
    close(s.entities.artists.get(1).unwrap(), &[2.0 / 3.0, 2.0 / 3.0]);
    close(s.entities.albums.get(3).unwrap(), &[4.0 / 3.0, 4.0 / 3.0]);
    close(s.entities.playlists.get(2).unwrap(), &[1.25, 1.0]);
}

#[test]
fn group_vectors_average_warm_users() {
    let s = setup();
    // user 1 streamed 1, 2, 1; user 2 streamed 4, 5
    close(s.groups.country(Some("FR")).unwrap(), &[2.0 / 3.0, 1.0 / 3.0]);
    close(s.groups.country(Some("DE")).unwrap(), &[1.0, 1.0]);
    assert!(s.groups.country(Some("US")).is_none());
    close(&s.groups.fallback, &[5.0 / 6.0, 2.0 / 3.0]);
}

#[test]
fn small_groups_fall_back_to_global_mean() {
    let s = setup();
    let tracks = track_vectors();
    let (warm, _) = warm_user_table(&s.bundle.warm_users(), &s.bundle.log, &tracks, HistoryWeighting::StreamCount).unwrap();
    let g = GroupEmbeddings::fit(&s.bundle.warm_users(), &warm, &s.bundle.universe, 2).unwrap();
    assert!(g.countries.is_empty() && g.ages.is_empty());
}

#[test]
fn cold_user_layout_by_hand() {
    let s = setup();
    let d = 2;
    let u = UserId(3);
    let profile = s.bundle.universe.profile(u).unwrap();
    let f = assemble_features(u, profile, s.bundle.log.for_user(u), &s.entities, &s.groups, &s.spec).unwrap();
    let v = &f.values;
    assert_eq!(v.len(), s.spec.total_dim());
    let n = s.spec.channels.len();

    let mut expected = vec![0.0; s.spec.total_dim()];
    let stream = channel(&s.spec, Signal::Stream, EntityKind::Track);
    let search = channel(&s.spec, Signal::Search, EntityKind::Playlist);
    expected[stream * d..stream * d + d].copy_from_slice(&[1.0, 1.0]);
    expected[search * d..search * d + d].copy_from_slice(&[2.0 / 3.0, 2.0 / 3.0]);
    // country FR and age class 25-34 both resolve to user 1's history mean
    expected[n * d..n * d + d].copy_from_slice(&[2.0 / 3.0, 1.0 / 3.0]);
    expected[(n + 1) * d..(n + 2) * d].copy_from_slice(&[2.0 / 3.0, 1.0 / 3.0]);
    let scalars = (n + 2) * d;
    expected[scalars + stream] = 2f64.ln();
    expected[scalars + search] = 2f64.ln();
    let extra = scalars + n;
    expected[extra] = 0.31;
    expected[extra + 5] = 1.0; // no onboarding
    close(v, &expected);
}

#[test]
fn missing_demographics_use_fallback_and_flags() {
    let s = setup();
    let d = 2;
    let u = UserId(4);
    let profile = s.bundle.universe.profile(u).unwrap();
    let v = assemble_features(u, profile, s.bundle.log.for_user(u), &s.entities, &s.groups, &s.spec)
        .unwrap()
        .values;
    let n = s.spec.channels.len();
    close(&v[n * d..n * d + d], &s.groups.fallback);
    // age 19 is known but nobody warm is 18-24
    close(&v[(n + 1) * d..(n + 2) * d], &s.groups.fallback);
    let extra = (n + 2) * d + n;
    close(&v[extra..], &[0.19, 0.0, 1.0, 0.0, 1.0, 1.0]);
}

#[test]
fn no_events_gives_zero_blocks() {
    let s = setup();
    let u = UserId(4);
    let profile = s.bundle.universe.profile(u).unwrap();
    let v = assemble_features(u, profile, &[], &s.entities, &s.groups, &s.spec)
        .unwrap()
        .values;
    let n = s.spec.channels.len();
    assert!(v[..n * 2].iter().all(|x| *x == 0.0));
    assert_eq!(v[(n + 2) * 2 + n + 3], 1.0);
}

#[test]
fn later_events_trip_the_leakage_guard() {
    let s = setup();
    let u = UserId(3);
    let profile = s.bundle.universe.profile(u).unwrap();
    let mut events = s.bundle.log.for_user(u).to_vec();
    events.push(Event::stream(u, profile.registration_day + 1, coldstart_core::TrackId(1)));
    let err = assemble_features(u, profile, &events, &s.entities, &s.groups, &s.spec).unwrap_err();
    assert!(matches!(err, Error::LeakageGuard { user: 3, day: 11, registration_day: 10 }));
}

#[test]
fn warm_features_use_registration_day_only() {
    let s = setup();
    let warm = s.bundle.warm_users();
    let lenient = build_feature_table(&warm, &s.bundle.universe, &s.bundle.log, &s.entities, &s.groups, &s.spec, false)
        .unwrap();
    let u1 = lenient.get(1).unwrap();
    let onboarding = channel(&s.spec, Signal::Onboarding, EntityKind::Artist);
    close(&u1[onboarding * 2..onboarding * 2 + 2], &[2.0 / 3.0, 2.0 / 3.0]);
    let stream = channel(&s.spec, Signal::Stream, EntityKind::Track);
    close(&u1[stream * 2..stream * 2 + 2], &[0.0, 0.0]);
    // the same users in strict mode see their later history and are refused
    assert!(matches!(
        build_feature_table(&warm, &s.bundle.universe, &s.bundle.log, &s.entities, &s.groups, &s.spec, true),
        Err(Error::LeakageGuard { .. })
    ));
}

#[test]
fn dimension_mismatch_is_reported() {
    let s = setup();
    let u = UserId(3);
    let profile = s.bundle.universe.profile(u).unwrap();
    let err = assemble_features(u, profile, &[], &s.entities, &s.groups, &ChannelSpec::standard(3)).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 2 }));
}
