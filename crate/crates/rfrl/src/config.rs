//! Experiment configuration as UTF-8 `key = value` lines with `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rfrl_core::data::{AugmentConfig, OodShift, Shift, SyntheticSpec, SYNTH_CLASSES};
use rfrl_core::losses::FrsNorm;
use rfrl_core::model::{LossSwitches, ModelConfig};
use rfrl_core::train::TrainConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    /// Directory-per-class PGM images, split by holdout fractions.
    Path { root: PathBuf, ood_root: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    /// Seeds data generation and splitting; the experiment seed when unset.
    pub seed: Option<u64>,
    pub noise_sigma: f64,
    pub band_thickness: (f64, f64),
    pub ood_shift: OodShift,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub ood_per_class: usize,
    /// Holdout fractions for directory datasets.
    pub split: (f64, f64, f64),
}

impl Default for DataConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        DataConfig {
            source: DataSource::Synthetic,
            seed: None,
            noise_sigma: synth.noise_sigma,
            band_thickness: synth.band_thickness,
            ood_shift: synth.ood,
            train_per_class: 100,
            val_per_class: 20,
            test_per_class: 50,
            ood_per_class: 50,
            split: (0.7, 0.1, 0.2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub frs_norm: FrsNorm,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub data: DataConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ExperimentConfig {
            model: ModelConfig::default(),
            frs_norm: t.frs_norm,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            augment: t.augment,
            seed: 0,
            data: DataConfig::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(format!("{}: cannot parse '{}'", key, value)))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("{}: expected a boolean, got '{}'", key, value))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Calls `set(key, value)` for every non-blank, non-comment line of `text`.
pub fn parse_kv_lines(text: &str, mut set: impl FnMut(&str, &str) -> Result<()>) -> Result<()> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
        set(key.trim(), value.trim()).map_err(|e| match e {
            Error::Core(rfrl_core::Error::Config(msg)) => Error::config(format!("line {}: {}", n + 1, msg)),
            other => other,
        })?;
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        parse_kv_lines(text, |k, v| cfg.set(k, v))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides, then re-validates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override '{}' is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let d = &mut self.data;
        let a = &mut self.augment;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "model.in_channels" => m.in_channels = parse(key, value)?,
            "model.height" => m.height = parse(key, value)?,
            "model.width" => m.width = parse(key, value)?,
            "model.n_stages" => m.n_stages = parse(key, value)?,
            "model.stem_channels" => m.stem_channels = parse(key, value)?,
            "model.stage_channels" => m.stage_channels = parse_list(key, value)?,
            "model.num_classes" => m.num_classes = parse(key, value)?,
            "loss.supervised" => m.loss_switches.supervised = parse_bool(key, value)?,
            "loss.unsupervised" => m.loss_switches.unsupervised = parse_bool(key, value)?,
            "loss.frs" => m.loss_switches.frs = parse_bool(key, value)?,
            "loss.frs_norm" => {
                self.frs_norm = match value {
                    "mse" => FrsNorm::MeanSquared,
                    "mae" => FrsNorm::MeanAbsolute,
                    _ => return Err(Error::config(format!("{}: expected mse or mae, got '{}'", key, value))),
                }
            }
            "train.epochs" => self.epochs = parse(key, value)?,
            "train.batch_size" => self.batch_size = parse(key, value)?,
            "train.lr" => self.lr = parse(key, value)?,
            "augment.flip_prob" => a.flip_prob = parse(key, value)?,
            "augment.rotation_deg" => a.rotation_deg = parse(key, value)?,
            "augment.zoom_min" => a.zoom.0 = parse(key, value)?,
            "augment.zoom_max" => a.zoom.1 = parse(key, value)?,
            "augment.width_shift" => a.width_shift = parse(key, value)?,
            "augment.height_shift" => a.height_shift = parse(key, value)?,
            "data.source" => {
                d.source = match value {
                    "synthetic" => DataSource::Synthetic,
                    "path" => match &d.source {
                        DataSource::Path { .. } => d.source.clone(),
                        DataSource::Synthetic => DataSource::Path { root: PathBuf::new(), ood_root: None },
                    },
                    _ => return Err(Error::config(format!("{}: expected synthetic or path, got '{}'", key, value))),
                }
            }
            "data.path" | "data.ood_path" => {
                let (mut root, mut ood_root) = match &d.source {
                    DataSource::Path { root, ood_root } => (root.clone(), ood_root.clone()),
                    DataSource::Synthetic => (PathBuf::new(), None),
                };
                if key == "data.path" {
                    root = PathBuf::from(value);
                } else {
                    ood_root = (!value.is_empty()).then(|| PathBuf::from(value));
                }
                d.source = DataSource::Path { root, ood_root };
            }
            "data.seed" => d.seed = if value.is_empty() { None } else { Some(parse(key, value)?) },
            "data.noise_sigma" => d.noise_sigma = parse(key, value)?,
            "data.band_min" => d.band_thickness.0 = parse(key, value)?,
            "data.band_max" => d.band_thickness.1 = parse(key, value)?,
            "data.ood_contrast_gain" => d.ood_shift.contrast_gain = parse(key, value)?,
            "data.ood_contrast_offset" => d.ood_shift.contrast_offset = parse(key, value)?,
            "data.ood_noise_factor" => d.ood_shift.noise_factor = parse(key, value)?,
            "data.ood_thickness_factor" => d.ood_shift.thickness_factor = parse(key, value)?,
            "data.train_per_class" => d.train_per_class = parse(key, value)?,
            "data.val_per_class" => d.val_per_class = parse(key, value)?,
            "data.test_per_class" => d.test_per_class = parse(key, value)?,
            "data.ood_per_class" => d.ood_per_class = parse(key, value)?,
            "data.split" => {
                let f: Vec<f64> = parse_list(key, value)?;
                if f.len() != 3 {
                    return Err(Error::config(format!("{}: expected three fractions", key)));
                }
                d.split = (f[0], f[1], f[2]);
            }
            _ => return Err(Error::config(format!("unknown key '{}'", key))),
        }
        Ok(())
    }

    /// Canonical `key = value` text; parsing it yields an equal config.
    pub fn to_kv_string(&self) -> String {
        let m = &self.model;
        let d = &self.data;
        let a = &self.augment;
        let s = m.loss_switches;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{} = {}", k, v);
        };
        kv("seed", self.seed.to_string());
        kv("out", self.out_dir.display().to_string());
        kv("model.in_channels", m.in_channels.to_string());
        kv("model.height", m.height.to_string());
        kv("model.width", m.width.to_string());
        kv("model.n_stages", m.n_stages.to_string());
        kv("model.stem_channels", m.stem_channels.to_string());
        kv("model.stage_channels", join(&m.stage_channels));
        kv("model.num_classes", m.num_classes.to_string());
        kv("loss.supervised", s.supervised.to_string());
        kv("loss.unsupervised", s.unsupervised.to_string());
        kv("loss.frs", s.frs.to_string());
        kv("loss.frs_norm", if self.frs_norm == FrsNorm::MeanAbsolute { "mae" } else { "mse" }.into());
        kv("train.epochs", self.epochs.to_string());
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.lr", format!("{:e}", self.lr));
        kv("augment.flip_prob", a.flip_prob.to_string());
        kv("augment.rotation_deg", a.rotation_deg.to_string());
        kv("augment.zoom_min", a.zoom.0.to_string());
        kv("augment.zoom_max", a.zoom.1.to_string());
        kv("augment.width_shift", a.width_shift.to_string());
        kv("augment.height_shift", a.height_shift.to_string());
        match &d.source {
            DataSource::Synthetic => kv("data.source", "synthetic".into()),
            DataSource::Path { root, ood_root } => {
                kv("data.source", "path".into());
                kv("data.path", root.display().to_string());
                kv("data.ood_path", ood_root.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
            }
        }
        kv("data.seed", d.seed.map(|s| s.to_string()).unwrap_or_default());
        kv("data.noise_sigma", d.noise_sigma.to_string());
        kv("data.band_min", d.band_thickness.0.to_string());
        kv("data.band_max", d.band_thickness.1.to_string());
        kv("data.ood_contrast_gain", d.ood_shift.contrast_gain.to_string());
        kv("data.ood_contrast_offset", d.ood_shift.contrast_offset.to_string());
        kv("data.ood_noise_factor", d.ood_shift.noise_factor.to_string());
        kv("data.ood_thickness_factor", d.ood_shift.thickness_factor.to_string());
        kv("data.train_per_class", d.train_per_class.to_string());
        kv("data.val_per_class", d.val_per_class.to_string());
        kv("data.test_per_class", d.test_per_class.to_string());
        kv("data.ood_per_class", d.ood_per_class.to_string());
        kv("data.split", join(&[d.split.0, d.split.1, d.split.2]));
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_config().validate()?;
        let d = &self.data;
        match &d.source {
            DataSource::Synthetic => {
                self.synthetic_spec(Shift::None, 1).validate()?;
                let m = &self.model;
                if m.height != m.width {
                    return Err(Error::config("synthetic data needs a square input"));
                }
                if m.num_classes != SYNTH_CLASSES.len() {
                    return Err(Error::config(format!(
                        "synthetic data has {} classes but model.num_classes = {}",
                        SYNTH_CLASSES.len(),
                        m.num_classes
                    )));
                }
                if d.train_per_class == 0 || d.val_per_class == 0 || d.test_per_class == 0 || d.ood_per_class == 0 {
                    return Err(Error::config("synthetic split sizes must be positive"));
                }
            }
            DataSource::Path { root, .. } => {
                if root.as_os_str().is_empty() {
                    return Err(Error::config("data.source = path needs data.path"));
                }
                let (a, b, c) = d.split;
                if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
                    return Err(Error::config("data.split fractions must lie in [0, 1] and sum to 1"));
                }
            }
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    pub fn synthetic_spec(&self, shift: Shift, per_class: usize) -> SyntheticSpec {
        SyntheticSpec {
            size: self.model.height,
            channels: self.model.in_channels,
            per_class,
            noise_sigma: self.data.noise_sigma,
            band_thickness: self.data.band_thickness,
            shift,
            ood: self.data.ood_shift,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            switches: self.model.loss_switches,
            frs_norm: self.frs_norm,
            augment: self.augment,
            seed: self.seed,
        }
    }

    pub fn with_switches(&self, switches: LossSwitches) -> Self {
        let mut c = self.clone();
        c.model.loss_switches = switches;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_kv_string()).unwrap(), cfg);
    }

    #[test]
    fn parses_comments_and_overrides() {
        let text = "# desk run\nseed = 9\nmodel.stage_channels = 4, 6, 8 # narrow\n\ntrain.lr=3e-4\nloss.frs = false\n";
        let mut cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.stage_channels, [4, 6, 8]);
        assert_eq!(cfg.lr, 3e-4);
        assert!(!cfg.model.loss_switches.frs);
        cfg.apply_overrides(&["seed=4", "data.source=path", "data.path=/tmp/x"]).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.data.source, DataSource::Path { root: "/tmp/x".into(), ood_root: None });
        assert_eq!(ExperimentConfig::parse(&cfg.to_kv_string()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let err = ExperimentConfig::parse("seed = 1\nmodel.depth = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("unknown key"), "{}", err);
        assert!(ExperimentConfig::parse("train.lr = fast").is_err());
        assert!(ExperimentConfig::parse("model.height = 36\nmodel.width = 36").is_err());
        assert!(ExperimentConfig::parse("just text").is_err());
        assert!(ExperimentConfig::parse("model.num_classes = 4").is_err());
        assert!(ExperimentConfig::parse("data.source = path").is_err());
    }
}
