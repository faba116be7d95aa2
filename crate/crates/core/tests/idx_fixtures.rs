use std::path::PathBuf;

use icu_core::data::{load_mnist_idx, parse_idx_images, MNIST_CLASSES};
use icu_core::{Dataset, Error};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn well_formed_pair() {
    let data: Dataset = load_mnist_idx(fixture("two-images-idx3-ubyte"), fixture("two-labels-idx1-ubyte")).unwrap();
    assert_eq!(data.len(), 2);
    assert_eq!(data.input_dim(), 784);
    assert_eq!(data.labels, vec![7, 2]);
    assert_eq!(data.num_classes, MNIST_CLASSES);
    assert_eq!(data.features[[0, 0]], 1.0);
    assert_eq!(data.features[[1, 5]], (97 + 5 * 13) as f64 / 255.0);
    assert!(data.features.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn wrong_magic() {
    let err = load_mnist_idx::<f64>(
        fixture("images-wrong-magic-idx3-ubyte"),
        fixture("two-labels-idx1-ubyte"),
    )
    .unwrap_err();
    assert!(err.to_string().starts_with("wrong magic for images"), "{err}");
    let err = load_mnist_idx::<f64>(
        fixture("two-images-idx3-ubyte"),
        fixture("labels-wrong-magic-idx1-ubyte"),
    )
    .unwrap_err();
    assert!(err.to_string().starts_with("wrong magic for labels"), "{err}");
}

#[test]
fn truncated_files() {
    let bytes = std::fs::read(fixture("images-truncated-idx3-ubyte")).unwrap();
    assert!(matches!(
        parse_idx_images::<f64>(&bytes),
        Err(Error::Truncated {
            file: "images",
            field: "pixels"
        })
    ));
    let bytes = std::fs::read(fixture("images-header-only-idx3-ubyte")).unwrap();
    assert!(matches!(
        parse_idx_images::<f64>(&bytes),
        Err(Error::Truncated {
            file: "images",
            field: "cols"
        })
    ));
}

#[test]
fn count_mismatch() {
    let err = load_mnist_idx::<f64>(fixture("two-images-idx3-ubyte"), fixture("three-labels-idx1-ubyte"));
    assert!(matches!(err, Err(Error::CountMismatch { images: 2, labels: 3 })));
}

#[test]
fn missing_file_is_io_error() {
    let err = load_mnist_idx::<f64>(fixture("nope"), fixture("two-labels-idx1-ubyte"));
    assert!(matches!(err, Err(Error::Io { .. })));
}
