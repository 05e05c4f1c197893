use std::io::Cursor;
use std::time::Instant;

use cxa_datagen::dataset::{read_dataset, read_dataset_from, write_dataset, write_dataset_to};
use cxa_datagen::error::DataError;
use cxa_datagen::generate::{generate_split, Split};
use cxa_datagen::keypoints::NeighborMode;
use cxa_datagen::sample::Channels;
use cxa_datagen::world::WorldConfig;

fn small(count: usize, seed: u64) -> (cxa_datagen::dataset::DatasetManifest, Vec<cxa_datagen::sample::TrajectorySample>) {
    generate_split(&WorldConfig::default(), &Channels::default(), seed, Split::Train, count).unwrap()
}

fn bytes(count: usize, seed: u64) -> Vec<u8> {
    let (m, s) = small(count, seed);
    let mut buf = Vec::new();
    write_dataset_to(&mut buf, &m, &s).unwrap();
    buf
}

#[test]
fn write_read_round_trip_is_value_identical() {
    let (m, s) = small(40, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.txt");
    write_dataset(&path, &m, &s).unwrap();
    let (m2, s2) = read_dataset(&path).unwrap();
    assert_eq!(m, m2);
    assert_eq!(s.len(), s2.len());
    for (a, b) in s.iter().zip(&s2) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.source_seed, b.source_seed);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.ego_past), bits(&b.ego_past));
        assert_eq!(bits(&a.ego_future), bits(&b.ego_future));
        assert_eq!(a.origin, b.origin);
        assert_eq!(a.neighbors, b.neighbors);
        assert_eq!(a.scene, b.scene);
    }
}

#[test]
fn generation_is_byte_deterministic() {
    assert_eq!(bytes(30, 77), bytes(30, 77));
    assert_ne!(bytes(30, 77), bytes(30, 78));
}

#[test]
fn count_mismatch_and_truncation_are_detected() {
    let good = String::from_utf8(bytes(5, 1)).unwrap();
    let mut lines: Vec<&str> = good.lines().collect();

    let missing_record = lines[..lines.len() - 1].join("\n") + "\n";
    assert!(matches!(read_dataset_from(Cursor::new(missing_record)), Err(DataError::Truncated(_))));

    let cut = &good[..good.len() - 40];
    assert!(matches!(read_dataset_from(Cursor::new(cut)), Err(DataError::Truncated(_))));

    lines.push(lines[1]);
    let extra = lines.join("\n") + "\n";
    assert!(read_dataset_from(Cursor::new(extra)).is_err());
}

#[test]
fn dimension_mismatch_names_the_record() {
    let good = String::from_utf8(bytes(4, 2)).unwrap();
    let mut lines: Vec<String> = good.lines().map(String::from).collect();
    lines[3].push_str(" 0.5");
    let bad = lines.join("\n") + "\n";
    match read_dataset_from(Cursor::new(bad)) {
        Err(DataError::DimensionMismatch { index, .. }) => assert_eq!(index, 2),
        other => panic!("expected a dimension mismatch, got {other:?}"),
    }

    let (m, mut s) = small(3, 2);
    s[1].neighbors.get_mut(&NeighborMode::Center).unwrap().pop();
    match write_dataset_to(Vec::new(), &m, &s) {
        Err(DataError::DimensionMismatch { index, .. }) => assert_eq!(index, 1),
        other => panic!("expected a dimension mismatch, got {other:?}"),
    }
}

#[test]
fn desk_sized_dataset_reads_quickly() {
    let (m, s) = small(2000, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.txt");
    write_dataset(&path, &m, &s).unwrap();
    let start = Instant::now();
    let (m2, s2) = read_dataset(&path).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(m2.count, 2000);
    assert_eq!(s2.len(), 2000);
    assert!(elapsed.as_secs_f64() < 5.0, "reading took {elapsed:?}");
}
