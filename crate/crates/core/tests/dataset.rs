use std::fs;
use std::path::Path;

use glioseg::dataset::{scan_dataset, split_manifest, DatasetManifest, Label, Split};
use glioseg::Error;
use image::{GrayImage, Luma, Rgb, RgbImage};
use proptest::prelude::*;
use tempfile::TempDir;

fn write_gray(path: &Path, w: u32, h: u32, pixels: &[u8]) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    GrayImage::from_raw(w, h, pixels.to_vec()).unwrap().save(path).unwrap();
}

fn tiny_png(path: &Path, v: u8) {
    write_gray(path, 2, 2, &[v; 4]);
}

fn tree(yes: usize, no: usize) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::create_dir_all(dir.path().join("yes")).unwrap();
    fs::create_dir_all(dir.path().join("no")).unwrap();
    for i in 0..yes {
        tiny_png(&dir.path().join(format!("yes/y{i:03}.png")), 200);
    }
    for i in 0..no {
        tiny_png(&dir.path().join(format!("no/n{i:03}.png")), 20);
    }
    dir
}

#[test]
fn three_file_fixture() {
    let dir = TempDir::new().unwrap();
    tiny_png(&dir.path().join("yes/a.png"), 1);
    tiny_png(&dir.path().join("yes/b.png"), 2);
    tiny_png(&dir.path().join("no/c.png"), 3);
    let m = scan_dataset(dir.path()).unwrap().manifest;
    let ids: Vec<&str> = m.entries.iter().map(|e| e.id.as_str()).collect();
    // Sorted by id: "no/..." precedes "yes/...".
    assert_eq!(ids, ["no/c.png", "yes/a.png", "yes/b.png"]);
    let mut labels: Vec<u8> = m.entries.iter().map(|e| e.label.as_u8()).collect();
    labels.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(labels, [1, 1, 0]);
    assert!(m.entries.iter().all(|e| e.split == Split::Unassigned));
}

#[test]
fn empty_class_folders_give_empty_manifest() {
    let dir = tree(0, 0);
    let out = scan_dataset(dir.path()).unwrap();
    assert!(out.manifest.entries.is_empty());
    assert!(out.skipped.is_empty());
}

#[test]
fn missing_folder_is_named() {
    let dir = TempDir::new().unwrap();
    fs::create_dir_all(dir.path().join("yes")).unwrap();
    match scan_dataset(dir.path()) {
        Err(Error::Config(msg)) => assert!(msg.contains("`no`"), "{msg}"),
        other => panic!("expected a configuration error, got {other:?}"),
    }
}

#[test]
fn corrupt_and_foreign_files_are_skipped() {
    let dir = tree(2, 1);
    fs::write(dir.path().join("yes/broken.png"), b"not an image").unwrap();
    fs::write(dir.path().join("no/notes.txt"), b"ignored").unwrap();
    let out = scan_dataset(dir.path()).unwrap();
    assert_eq!(out.manifest.entries.len(), 3);
    assert_eq!(out.skipped.len(), 1);
    assert!(out.skipped[0].ends_with("broken.png"));
}

#[test]
fn full_size_fixture_counts_and_stratification() {
    let dir = tree(158, 98);
    let m = scan_dataset(dir.path()).unwrap().manifest;
    assert_eq!(m.entries.len(), 256);
    assert_eq!(m.entries.iter().filter(|e| e.label == Label::Tumorous).count(), 158);

    let s = split_manifest(&m, [0.7, 0.15, 0.15], 42).unwrap();
    let global = 158.0 / 256.0;
    for split in Split::ASSIGNED {
        let members: Vec<_> = s.entries_in(split).collect();
        let pos = members.iter().filter(|e| e.label == Label::Tumorous).count();
        let frac = pos as f64 / members.len() as f64;
        assert!((frac - global).abs() <= 0.10, "{split:?}: {frac}");
    }
    let counts = s.split_counts();
    for (c, r) in counts.iter().zip([0.7, 0.15, 0.15]) {
        assert!((*c as f64 - r * 256.0).abs() <= 1.0, "{counts:?}");
    }
}

#[test]
fn scan_is_idempotent() {
    let dir = tree(5, 4);
    let a = scan_dataset(dir.path()).unwrap().manifest.to_json();
    let b = scan_dataset(dir.path()).unwrap().manifest.to_json();
    assert_eq!(a, b);
}

#[test]
fn masks_are_discovered_by_convention() {
    let dir = tree(1, 1);
    tiny_png(&dir.path().join("masks/yes/y000.png"), 1);
    let m = scan_dataset(dir.path()).unwrap().manifest;
    let yes = m.entries.iter().find(|e| e.id == "yes/y000.png").unwrap();
    assert_eq!(yes.mask_path.as_deref(), Some("masks/yes/y000.png"));
    let no = m.entries.iter().find(|e| e.id == "no/n000.png").unwrap();
    assert_eq!(no.mask_path, None);
}

#[test]
fn lossless_gray_decode() {
    let dir = tree(0, 0);
    write_gray(&dir.path().join("yes/q.png"), 2, 2, &[0, 85, 170, 255]);
    let m = scan_dataset(dir.path()).unwrap().manifest;
    let s = m.load_sample(&m.entries[0]).unwrap();
    assert_eq!(s.pixels.rows(), vec![vec![0.0, 85.0], vec![170.0, 255.0]]);
    assert!(!s.needs_grayscale());
}

#[test]
fn rgb_input_keeps_three_channels() {
    let dir = tree(0, 0);
    let img = RgbImage::from_fn(3, 2, |x, y| Rgb([x as u8 * 10, y as u8 * 20, 7]));
    img.save(dir.path().join("no/rgb.png")).unwrap();
    let m = scan_dataset(dir.path()).unwrap().manifest;
    let s = m.load_sample(&m.entries[0]).unwrap();
    assert_eq!(s.pixels.channels(), 3);
    assert!(s.needs_grayscale());
    assert_eq!(s.pixels.get(1, 2, 0), 20.0);
    assert_eq!(s.pixels.get(1, 2, 1), 20.0);
}

#[test]
fn deleted_file_is_an_io_error() {
    let dir = tree(1, 0);
    let m = scan_dataset(dir.path()).unwrap().manifest;
    fs::remove_file(dir.path().join("yes/y000.png")).unwrap();
    match m.load_sample(&m.entries[0]) {
        Err(Error::Io { path, .. }) => assert!(path.ends_with("yes/y000.png")),
        other => panic!("expected an I/O error, got {other:?}"),
    }
}

#[test]
fn mismatched_mask_is_rejected() {
    let dir = tree(1, 0);
    let mut img = GrayImage::new(3, 3);
    img.put_pixel(0, 0, Luma([1]));
    fs::create_dir_all(dir.path().join("masks/yes")).unwrap();
    img.save(dir.path().join("masks/yes/y000.png")).unwrap();
    let m = scan_dataset(dir.path()).unwrap().manifest;
    assert!(matches!(m.load_sample(&m.entries[0]), Err(Error::Validation(_))));
}

#[test]
fn relative_root_resolves_against_manifest_location() {
    let dir = tree(2, 2);
    let mut m = split_manifest(&scan_dataset(dir.path()).unwrap().manifest, [0.5, 0.25, 0.25], 3).unwrap();
    let nested = dir.path().join("meta");
    m.root = "..".into();
    m.save(&nested.join("m.json")).unwrap();
    let loaded = DatasetManifest::load(&nested.join("m.json")).unwrap();
    assert_eq!(loaded.entries, m.entries);
    let s = loaded.load_sample(&loaded.entries[0]).unwrap();
    assert_eq!(s.height(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_every_entry(labels in prop::collection::vec(0u8..2, 1..120), seed in any::<u64>()) {
        let m = DatasetManifest {
            root: ".".into(),
            seed: 0,
            split_ratios: [1.0, 0.0, 0.0],
            entries: labels.iter().enumerate().map(|(i, &l)| glioseg::dataset::SampleEntry {
                id: format!("{i:04}"),
                path: format!("{i:04}.png"),
                label: Label::from_u8(l).unwrap(),
                split: Split::Unassigned,
                mask_path: None,
            }).collect(),
        };
        let ratios = [0.7, 0.15, 0.15];
        match split_manifest(&m, ratios, seed) {
            Ok(s) => {
                prop_assert!(s.entries.iter().all(|e| e.split != Split::Unassigned));
                let counts = s.split_counts();
                prop_assert_eq!(counts.iter().sum::<usize>(), labels.len());
                for (c, r) in counts.iter().zip(ratios) {
                    prop_assert!((*c as f64 - r * labels.len() as f64).abs() <= 1.0);
                }
                prop_assert_eq!(&s, &split_manifest(&m, ratios, seed).unwrap());
                let ids: Vec<_> = s.entries.iter().map(|e| &e.id).collect();
                let orig: Vec<_> = m.entries.iter().map(|e| &e.id).collect();
                prop_assert_eq!(ids, orig);
            }
            Err(e) => prop_assert!(matches!(e, Error::Config(_))),
        }
    }
}
