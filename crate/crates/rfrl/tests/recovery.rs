use rfrl::checkpoint::Checkpoint;
use rfrl::cli::train_on;
use rfrl::config::ExperimentConfig;
use rfrl::experiment::load_splits;
use rfrl::Error;
use rfrl_core::data::{Dataset, Sample};
use rfrl_core::rng::{streams, Rng};
use rfrl_core::Tensor;

/// A seed whose first shuffle of five indices leaves `victim` in the dropped
/// remainder and whose second does not.
fn seed_dropping_first(victim: usize) -> u64 {
    (0..1000)
        .find(|&s| {
            let mut rng = Rng::stream(s, streams::SHUFFLE);
            let mut a: Vec<usize> = (0..5).collect();
            rng.shuffle(&mut a);
            let mut b: Vec<usize> = (0..5).collect();
            rng.shuffle(&mut b);
            a[4] == victim && b[4] != victim
        })
        .unwrap()
}

#[test]
fn failure_mid_run_keeps_the_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    let out = format!("out={}", dir.path().join("run").display());
    cfg.apply_overrides(&[
        "model.height=16",
        "model.width=16",
        "model.n_stages=2",
        "model.stem_channels=4",
        "model.stage_channels=6,8",
        "train.epochs=5",
        "data.train_per_class=2",
        "data.val_per_class=1",
        "data.test_per_class=1",
        "data.ood_per_class=1",
        out.as_str(),
    ])
    .unwrap();
    cfg.seed = seed_dropping_first(4);

    let mut splits = load_splits(&cfg).unwrap();
    let mut samples: Vec<Sample> = splits.train.samples()[..4].to_vec();
    samples.push(Sample { image: Tensor::full(&[1, 16, 16], f32::NAN), label: 1 });
    splits.train = Dataset::new(samples, 3).unwrap();

    let err = train_on(&cfg, &splits).unwrap_err();
    assert!(matches!(err, Error::Core(rfrl_core::Error::Numerics(_))), "{}", err);
    assert_eq!(err.exit_code(), 2);

    let saved = Checkpoint::load(cfg.out_dir.join("best.ckpt")).unwrap();
    assert_eq!(saved.epoch, 1);
    assert!(saved.model.params().tensors().iter().all(|t| t.all_finite()));
    let run = std::fs::read_to_string(cfg.out_dir.join("run.csv")).unwrap();
    assert_eq!(run.lines().count(), 2, "header plus the completed epoch");
}
