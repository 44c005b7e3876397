//! Data splits, training runs and the loss-head ablation.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rfrl_core::data::{split, synth_generate, Dataset, Shift, SplitScheme, SYNTH_CLASSES};
use rfrl_core::metrics::Metrics;
use rfrl_core::model::{LossSwitches, RfrlModel};
use rfrl_core::rng::{derive_seed, streams};
use rfrl_core::train::{evaluate, EpochRecord, Evaluation, Trainer};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, ExperimentConfig};
use crate::error::{Error, Result};
use crate::pgm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitName {
    Train,
    Val,
    Test,
    Ood,
}

impl SplitName {
    pub const ALL: [SplitName; 4] = [SplitName::Train, SplitName::Val, SplitName::Test, SplitName::Ood];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
            SplitName::Ood => "ood",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown split '{}'; expected train, val, test or ood", s)))
    }
}

/// The four evaluation sets of one experiment; `ood` is absent for directory
/// datasets without `data.ood_path`.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub ood: Option<Dataset>,
    pub class_names: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: SplitName) -> Result<&Dataset> {
        match name {
            SplitName::Train => Ok(&self.train),
            SplitName::Val => Ok(&self.val),
            SplitName::Test => Ok(&self.test),
            SplitName::Ood => {
                self.ood.as_ref().ok_or_else(|| Error::config("no out-of-distribution set configured (data.ood_path)"))
            }
        }
    }
}

fn synthetic_split(cfg: &ExperimentConfig, name: SplitName) -> Result<Dataset> {
    let d = &cfg.data;
    let (per_class, tag, shift) = match name {
        SplitName::Train => (d.train_per_class, streams::DATA_TRAIN, Shift::None),
        SplitName::Val => (d.val_per_class, streams::DATA_VAL, Shift::None),
        SplitName::Test => (d.test_per_class, streams::DATA_TEST, Shift::None),
        SplitName::Ood => (d.ood_per_class, streams::DATA_OOD, Shift::Ood),
    };
    Ok(synth_generate(&cfg.synthetic_spec(shift, per_class), derive_seed(cfg.data_seed(), tag))?)
}

fn check_shape(cfg: &ExperimentConfig, data: &Dataset, what: &str) -> Result<()> {
    let m = &cfg.model;
    let want = [m.in_channels, m.height, m.width];
    match data.image_shape() {
        Some(s) if s != want => Err(Error::config(format!("{} images are {:?} but the model expects {:?}", what, s, want))),
        _ if data.num_classes() != m.num_classes => Err(Error::config(format!(
            "{} has {} classes but model.num_classes = {}",
            what,
            data.num_classes(),
            m.num_classes
        ))),
        _ => Ok(()),
    }
}

/// Builds all splits. Synthetic sets draw each split from its own seed
/// stream; directory datasets are split by stratified holdout.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let m = &cfg.model;
    let splits = match &cfg.data.source {
        DataSource::Synthetic => Splits {
            train: synthetic_split(cfg, SplitName::Train)?,
            val: synthetic_split(cfg, SplitName::Val)?,
            test: synthetic_split(cfg, SplitName::Test)?,
            ood: Some(synthetic_split(cfg, SplitName::Ood)?),
            class_names: SYNTH_CLASSES.iter().map(|s| s.to_string()).collect(),
        },
        DataSource::Path { root, ood_root } => {
            let (all, class_names) = pgm::load_dataset(root, m.in_channels, m.height, m.width)?;
            let (train, val, test) = cfg.data.split;
            let scheme = SplitScheme::Holdout { train, val, test };
            let parts = split(&all.labels(), scheme, derive_seed(cfg.data_seed(), streams::SPLIT))?;
            let ood = match ood_root {
                Some(p) => {
                    let (ood, ood_names) = pgm::load_dataset(p, m.in_channels, m.height, m.width)?;
                    if ood_names != class_names {
                        return Err(Error::config(format!(
                            "ood classes {:?} differ from training classes {:?}",
                            ood_names, class_names
                        )));
                    }
                    Some(ood)
                }
                None => None,
            };
            Splits { train: all.subset(&parts[0]), val: all.subset(&parts[1]), test: all.subset(&parts[2]), ood, class_names }
        }
    };
    for name in SplitName::ALL {
        if let Ok(d) = splits.get(name) {
            check_shape(cfg, d, name.as_str())?;
            if d.is_empty() {
                return Err(rfrl_core::Error::Dataset(format!("{} split is empty", name)).into());
            }
        }
    }
    Ok(splits)
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<EpochRecord>,
    /// Lowest validation loss, earliest epoch on ties.
    pub best: Checkpoint,
    pub seconds: f64,
}

/// Trains per `cfg`; `on_epoch` sees each record and, when validation
/// improved, the new best checkpoint. On failure the records gathered so
/// far are handed to `on_abort` before the error is returned.
pub fn run_training(
    cfg: &ExperimentConfig,
    splits: &Splits,
    mut on_epoch: impl FnMut(&EpochRecord, Option<&Checkpoint>) -> Result<()>,
    on_abort: impl FnOnce(&[EpochRecord]),
) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let model = RfrlModel::<f32>::build(&cfg.model, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.train_config())?;
    let mut best: Option<Checkpoint> = None;
    for _ in 0..cfg.epochs {
        if let Err(e) = trainer.train_epoch(&splits.train, &splits.val) {
            on_abort(trainer.records());
            return Err(e.into());
        }
        let rec = trainer.records().last().expect("epoch recorded");
        if rec.improved {
            let snap = trainer.best().expect("improved epoch has a snapshot");
            best = Some(Checkpoint::from_snapshot(cfg, snap, trainer.plateau));
        }
        on_epoch(rec, if rec.improved { best.as_ref() } else { None })?;
    }
    let best = best.ok_or_else(|| Error::config("train.epochs must be positive"))?;
    Ok(RunOutput { records: trainer.records().to_vec(), best, seconds: start.elapsed().as_secs_f64() })
}

pub fn evaluate_split(ckpt: &Checkpoint, data: &Dataset) -> Result<Evaluation> {
    check_shape(&ckpt.config, data, "dataset")?;
    Ok(evaluate(&ckpt.model, data, ckpt.config.model.loss_switches, ckpt.config.frs_norm)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    ClassifierOnly,
    ClassifierDecoder,
    Rfrl,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::ClassifierOnly, Variant::ClassifierDecoder, Variant::Rfrl];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ClassifierOnly => "classifier_only",
            Variant::ClassifierDecoder => "classifier_decoder",
            Variant::Rfrl => "rfrl",
        }
    }

    pub fn switches(self) -> LossSwitches {
        match self {
            Variant::ClassifierOnly => LossSwitches::CLASSIFIER_ONLY,
            Variant::ClassifierDecoder => LossSwitches::CLASSIFIER_DECODER,
            Variant::Rfrl => LossSwitches::ALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub seed: u64,
    pub variant: Variant,
    pub split: SplitName,
    pub metrics: Metrics,
    pub best_epoch: usize,
}

/// Trains every variant for every seed on identical data and initial
/// weights, then scores the best checkpoints on the test and OOD splits.
/// Rows come out ordered by seed, variant, split.
pub fn ablate(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::config("ablation needs at least one seed"));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut seeded = cfg.clone();
        seeded.seed = seed;
        let splits = load_splits(&seeded)?;
        for variant in Variant::ALL {
            let run_cfg = seeded.with_switches(variant.switches());
            let out = run_training(&run_cfg, &splits, |_, _| Ok(()), |_| {})?;
            log::info!("seed {} {} best epoch {} ({:.1}s)", seed, variant.name(), out.best.epoch, out.seconds);
            for split in [SplitName::Test, SplitName::Ood] {
                let Ok(data) = splits.get(split) else { continue };
                let metrics = evaluate_split(&out.best, data)?.metrics()?;
                let row = AblationRow { seed, variant, split, metrics, best_epoch: out.best.epoch };
                progress(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Median of `values` (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Median accuracy per (variant, split) over seeds.
pub fn median_accuracy(rows: &[AblationRow], variant: Variant, split: SplitName) -> Option<f64> {
    let acc: Vec<f64> =
        rows.iter().filter(|r| r.variant == variant && r.split == split).map(|r| r.metrics.accuracy).collect();
    median(&acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn split_names_parse() {
        for s in SplitName::ALL {
            assert_eq!(s.as_str().parse::<SplitName>().unwrap(), s);
        }
        assert!("holdout".parse::<SplitName>().is_err());
    }

    #[test]
    fn synthetic_splits_are_sized_and_distinct() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&["data.train_per_class=2", "data.val_per_class=1", "data.test_per_class=1", "data.ood_per_class=1"])
            .unwrap();
        let s = load_splits(&cfg).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len(), s.ood.as_ref().unwrap().len()), (6, 3, 3, 3));
        assert_ne!(s.val.get(0), s.test.get(0));
        assert_eq!(load_splits(&cfg).unwrap(), s);
    }
}
