use std::fs;
use std::path::Path;

use rfrl::config::ExperimentConfig;
use rfrl::experiment::{load_splits, SplitName};
use rfrl::pgm::{load_dataset, load_pgm, save_pgm};
use rfrl::Error;
use rfrl_core::Tensor;

fn write_gray(path: &Path, h: usize, w: usize, value: f64) {
    save_pgm(path, &Tensor::full(&[h, w], value)).unwrap();
}

fn two_classes(root: &Path) {
    for (class, v) in [("a", 0.0), ("b", 1.0)] {
        fs::create_dir_all(root.join(class)).unwrap();
        for i in 0..3 {
            write_gray(&root.join(class).join(format!("{}.pgm", i)), 6, 6, v);
        }
    }
}

#[test]
fn loads_two_classes_of_three() {
    let dir = tempfile::tempdir().unwrap();
    two_classes(dir.path());
    let (data, names) = load_dataset(dir.path(), 1, 4, 4).unwrap();
    assert_eq!(names, ["a", "b"]);
    assert_eq!(data.labels(), [0, 0, 0, 1, 1, 1]);
    assert_eq!(data.image_shape(), Some(&[1, 4, 4][..]));
    assert!(data.get(0).image.data().iter().all(|&v| v == 0.0));
    assert!(data.get(5).image.data().iter().all(|&v| v == 1.0));
}

#[test]
fn malformed_files_and_empty_classes() {
    let dir = tempfile::tempdir().unwrap();
    two_classes(dir.path());
    let victim = dir.path().join("b").join("1.pgm");
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 5]).unwrap();
    match load_dataset(dir.path(), 1, 6, 6) {
        Err(Error::Format { path, .. }) => assert_eq!(path, victim),
        other => panic!("expected a format error, got {:?}", other.map(|d| d.1)),
    }
    assert!(matches!(load_pgm(dir.path().join("missing.pgm")), Err(Error::Format { .. })));

    let empty = tempfile::tempdir().unwrap();
    two_classes(empty.path());
    fs::create_dir(empty.path().join("c")).unwrap();
    assert!(matches!(load_dataset(empty.path(), 1, 6, 6), Err(Error::Core(rfrl_core::Error::Dataset(_)))));
}

#[test]
fn directory_source_is_split_by_holdout() {
    let dir = tempfile::tempdir().unwrap();
    for class in ["x", "y", "z"] {
        fs::create_dir_all(dir.path().join(class)).unwrap();
        for i in 0..10 {
            write_gray(&dir.path().join(class).join(format!("{:02}.pgm", i)), 32, 32, i as f64 / 10.0);
        }
    }
    let mut cfg = ExperimentConfig::default();
    let root = format!("data.path={}", dir.path().display());
    cfg.apply_overrides(&["data.source=path", root.as_str(), "data.split=0.6,0.2,0.2"]).unwrap();
    let s = load_splits(&cfg).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (18, 6, 6));
    assert_eq!(s.train.class_counts(), [6, 6, 6]);
    assert!(s.get(SplitName::Ood).is_err());
}
