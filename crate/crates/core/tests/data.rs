mod common;

use std::fs;
use std::io::Write;
use std::path::Path;

use ckdyn::data::{
    best_threshold_accuracy, generate_toy_1d, load_mnist_dir, load_mnist_idx, mnist_paths, split, write_idx,
    Dataset, MNIST_IMAGES, MNIST_LABELS, TOY_BLUE, TOY_RED,
};
use ckdyn::tensor::Tensor;
use ckdyn::{Error, IdxError};
use flate2::write::GzEncoder;
use flate2::Compression;
use proptest::prelude::*;

/// Two 2x3 images and their labels, byte for byte.
fn fixture_images() -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
    b.extend([0, 51, 102, 153, 204, 255]);
    b.extend([255, 0, 255, 0, 255, 0]);
    b
}

fn fixture_labels() -> Vec<u8> {
    vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3]
}

fn write(path: &Path, bytes: &[u8]) {
    fs::write(path, bytes).unwrap();
}

fn write_gz(path: &Path, bytes: &[u8]) {
    let mut enc = GzEncoder::new(fs::File::create(path).unwrap(), Compression::default());
    enc.write_all(bytes).unwrap();
    enc.finish().unwrap();
}

#[test]
fn hand_built_idx_pair_loads() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = (dir.path().join("img"), dir.path().join("lbl"));
    write(&i, &fixture_images());
    write(&l, &fixture_labels());
    let ds = load_mnist_idx(&i, &l).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.input_dim(), 6);
    assert_eq!(ds.labels(), &[7, 3]);
    assert_eq!(ds.num_classes(), 10);
    assert_eq!(ds.inputs().row(0), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    assert_eq!(ds.inputs().row(1), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn gzipped_pair_in_directory_loads() {
    let dir = tempfile::tempdir().unwrap();
    write_gz(&dir.path().join(format!("{MNIST_IMAGES}.gz")), &fixture_images());
    write_gz(&dir.path().join(format!("{MNIST_LABELS}.gz")), &fixture_labels());
    let ds = load_mnist_dir(dir.path()).unwrap();
    assert_eq!(ds.labels(), &[7, 3]);
}

#[test]
fn uncompressed_pair_in_directory_loads() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join(MNIST_IMAGES), &fixture_images());
    write(&dir.path().join(MNIST_LABELS), &fixture_labels());
    let (i, _) = mnist_paths(dir.path()).unwrap();
    assert!(i.ends_with(MNIST_IMAGES));
    assert_eq!(load_mnist_dir(dir.path()).unwrap().len(), 2);
}

#[test]
fn write_then_read_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<f64> = (0..12).map(|v| v as f64 * 17.0 / 255.0).collect();
    let ds = Dataset::new(Tensor::new([3, 4], pixels).unwrap(), vec![9, 0, 4], 10).unwrap();
    for suffix in ["", ".gz"] {
        let i = dir.path().join(format!("i{suffix}"));
        let l = dir.path().join(format!("l{suffix}"));
        write_idx(&ds, 2, 2, &i, &l).unwrap();
        let back = load_mnist_idx(&i, &l).unwrap();
        assert_eq!(back.labels(), ds.labels());
        assert!(back.inputs().max_abs_diff(ds.inputs()) < 1e-15);
    }
    assert!(write_idx(&ds, 3, 3, dir.path().join("x"), dir.path().join("y")).is_err());
}

#[test]
fn bad_magic_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = (dir.path().join("img"), dir.path().join("lbl"));
    write(&i, &fixture_labels());
    write(&l, &fixture_labels());
    let err = load_mnist_idx(&i, &l).unwrap_err();
    assert!(matches!(err, Error::Idx(IdxError::BadMagic { expected: 0x803, found: 0x801, .. })), "{err}");
}

#[test]
fn truncated_payload_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = (dir.path().join("img"), dir.path().join("lbl"));
    let mut img = fixture_images();
    img.truncate(img.len() - 1);
    write(&i, &img);
    write(&l, &fixture_labels());
    let err = load_mnist_idx(&i, &l).unwrap_err();
    assert!(matches!(err, Error::Idx(IdxError::Truncated { expected: 28, found: 27, .. })), "{err}");
    write(&i, &[0, 0, 8]);
    assert!(matches!(load_mnist_idx(&i, &l), Err(Error::Idx(IdxError::Truncated { .. }))));
}

#[test]
fn count_mismatch_and_label_range() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = (dir.path().join("img"), dir.path().join("lbl"));
    write(&i, &fixture_images());
    write(&l, &[0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3]);
    let err = load_mnist_idx(&i, &l).unwrap_err();
    assert!(matches!(err, Error::Idx(IdxError::CountMismatch { images: 2, labels: 3 })), "{err}");
    write(&l, &[0, 0, 8, 1, 0, 0, 0, 2, 1, 12]);
    let err = load_mnist_idx(&i, &l).unwrap_err();
    assert!(matches!(err, Error::Idx(IdxError::LabelRange { label: 12, .. })), "{err}");
}

#[test]
fn missing_directory_explains_itself() {
    let err = load_mnist_dir("/nonexistent/mnist").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    let msg = err.to_string();
    assert!(msg.contains("--data-dir") && msg.contains("CK_DATA_DIR"), "{msg}");
}

#[test]
fn bundled_subset_loads() {
    let ds = load_mnist_dir(common::mnist_fixture_dir()).unwrap();
    assert_eq!(ds.len(), 10_000);
    assert_eq!(ds.input_dim(), 784);
    assert!(ds.inputs().data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(ds.class_counts().iter().all(|&c| c > 800));
}

#[test]
fn split_partitions_deterministically() {
    let n = 101;
    let ds = Dataset::new(
        Tensor::new([n, 1], (0..n).map(|v| v as f64).collect()).unwrap(),
        (0..n).map(|v| v % 3).collect(),
        3,
    )
    .unwrap();
    let (a, b) = split(&ds, 0.8, 42).unwrap();
    assert_eq!((a.len(), b.len()), (81, 20));
    let mut ids: Vec<usize> = a.inputs().data().iter().chain(b.inputs().data()).map(|&v| v as usize).collect();
    for (row, &id) in a.inputs().data().iter().zip(a.labels()) {
        assert_eq!(*row as usize % 3, id);
    }
    ids.sort_unstable();
    assert_eq!(ids, (0..n).collect::<Vec<_>>());
    assert_eq!(split(&ds, 0.8, 42).unwrap(), (a.clone(), b));
    assert_ne!(split(&ds, 0.8, 43).unwrap().0, a);
    assert!(matches!(split(&ds, 1.0, 0), Err(Error::Contract(_))));
    assert!(matches!(split(&ds, 0.001, 0), Err(Error::Contract(_))));
}

#[test]
fn toy_data_layout() {
    for seed in 0..10 {
        let ds = generate_toy_1d(25, seed).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.class_counts(), vec![50, 50]);
        for (&x, &y) in ds.inputs().data().iter().zip(ds.labels()) {
            assert!((-3.0..3.0).contains(&x));
            let expected = if (-1.0..1.0).contains(&x) { TOY_RED } else { TOY_BLUE };
            assert_eq!(y, expected);
        }
        // No single threshold separates a middle band from both flanks.
        assert!(best_threshold_accuracy(ds.inputs().data(), ds.labels()) <= 0.75 + 1e-12);
    }
    assert_eq!(generate_toy_1d(5, 1).unwrap(), generate_toy_1d(5, 1).unwrap());
}

#[test]
fn threshold_accuracy_examples() {
    assert_eq!(best_threshold_accuracy(&[0.0, 1.0, 2.0, 3.0], &[0, 0, 1, 1]), 1.0);
    assert_eq!(best_threshold_accuracy(&[0.0, 1.0, 2.0, 3.0], &[1, 1, 0, 0]), 1.0);
    assert_eq!(best_threshold_accuracy(&[0.0, 1.0, 2.0, 3.0], &[0, 1, 1, 0]), 0.75);
    // Tied values cannot be split.
    assert_eq!(best_threshold_accuracy(&[1.0, 1.0], &[0, 1]), 0.5);
    assert_eq!(best_threshold_accuracy(&[], &[]), 0.0);
}

#[test]
fn dataset_validation() {
    assert!(matches!(Dataset::new(Tensor::zeros([2, 2]), vec![0], 2), Err(Error::Dimension { .. })));
    assert!(matches!(Dataset::new(Tensor::zeros([1, 2]), vec![2], 2), Err(Error::Contract(_))));
}

/// Brute force over every cut and polarity.
fn brute_threshold(values: &[f64], labels: &[usize]) -> f64 {
    let n = values.len();
    let mut cuts: Vec<f64> = values.to_vec();
    cuts.push(f64::NEG_INFINITY);
    let mut best = 0;
    for &t in &cuts {
        let above: usize = values.iter().zip(labels).filter(|(&v, &y)| (v > t) == (y == 1)).count();
        best = best.max(above).max(n - above);
    }
    best as f64 / n as f64
}

proptest! {
    #[test]
    fn threshold_accuracy_matches_brute_force(pairs in proptest::collection::vec((-5i32..5, 0usize..2), 1..40)) {
        let values: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        prop_assert_eq!(best_threshold_accuracy(&values, &labels), brute_threshold(&values, &labels));
    }
}
