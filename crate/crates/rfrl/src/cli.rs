//! Command-line interface.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rfrl_core::data::{synth_generate, Shift, SyntheticSpec, SYNTH_CLASSES};
use rfrl_core::explain::{explain, CamMethod, Heatmap, Stage};
use rfrl_core::gradcheck::{standard_suite, GradCheck};
use rfrl_core::Tensor;

use crate::checkpoint::Checkpoint;
use crate::config::{parse_kv_lines, ExperimentConfig};
use crate::error::{Error, Result};
use crate::experiment::{self, load_splits, run_training, SplitName, Splits};
use crate::{pgm, report, tensor_io};

#[derive(Debug, Parser)]
#[command(name = "rfrl", version, about = "Robust feature representation learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model; writes best.ckpt, run.csv and metrics.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra `key=value` overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on one split; prints metrics CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Compare classifier-only, classifier+decoder and full training over seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = rfrl_core::gradcheck::DEFAULT_SEEDS)]
        seeds: usize,
    },
    /// Class activation heatmaps for one image.
    Gradcam {
        #[arg(long)]
        ckpt: PathBuf,
        /// PGM image to explain.
        #[arg(long, conflicts_with = "index")]
        input: Option<PathBuf>,
        /// Sample index into `--split` instead of an image file.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        class: usize,
        #[arg(long, default_value = "n")]
        stage: String,
        #[arg(long, value_enum, default_value_t = MethodArg::All)]
        method: MethodArg,
        #[arg(long, default_value = "gradcam")]
        out: PathBuf,
    },
    /// Generate a synthetic dataset as directory-per-class PGM files.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Cam,
    Campp,
    All,
}

impl MethodArg {
    fn methods(self) -> &'static [CamMethod] {
        match self {
            MethodArg::Cam => &[CamMethod::GradCam],
            MethodArg::Campp => &[CamMethod::GradCamPlusPlus],
            MethodArg::All => &[CamMethod::GradCam, CamMethod::GradCamPlusPlus],
        }
    }
}

/// Outcome of a command that ran to completion but may still report failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
}

pub fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Train { config, seed, out, overrides } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            cfg.apply_overrides(&overrides)?;
            train(&cfg).map(|_| Status::Ok)
        }
        Command::Eval { ckpt, split } => {
            let split: SplitName = split.parse()?;
            let ckpt = Checkpoint::load(&ckpt)?;
            let splits = load_splits(&ckpt.config)?;
            let m = experiment::evaluate_split(&ckpt, splits.get(split)?)?.metrics()?;
            let mut w = csv::Writer::from_writer(io::stdout());
            report::write_metrics(&mut w, &[(run_id(&ckpt.config), split, m)])?;
            Ok(Status::Ok)
        }
        Command::Ablate { config, seeds, out, overrides } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            cfg.apply_overrides(&overrides)?;
            ablate(&cfg, &seeds).map(|_| Status::Ok)
        }
        Command::Gradcheck { seeds } => {
            let check = GradCheck { seeds: (0..seeds as u64).collect(), ..Default::default() };
            let outcomes = standard_suite(&check);
            let mut w = csv::Writer::from_writer(io::stdout());
            report::write_gradcheck(&mut w, &outcomes)?;
            Ok(if outcomes.iter().all(|o| o.passed) { Status::Ok } else { Status::Failed })
        }
        Command::Gradcam { ckpt, input, index, split, class, stage, method, out } => {
            let stage: Stage = stage.parse()?;
            let ckpt = Checkpoint::load(&ckpt)?;
            let m = &ckpt.config.model;
            let image = match (input, index) {
                (Some(p), _) => pgm::conform(&pgm::load_pgm(&p)?, m.in_channels, m.height, m.width)?,
                (None, Some(i)) => {
                    let splits = load_splits(&ckpt.config)?;
                    let data = splits.get(split.parse()?)?;
                    if i >= data.len() {
                        return Err(Error::config(format!("index {} out of range for {} samples", i, data.len())));
                    }
                    data.get(i).image.clone()
                }
                (None, None) => return Err(Error::config("gradcam needs --input or --index")),
            };
            for path in gradcam(&ckpt, &image, class, stage, method.methods(), &out)? {
                println!("{}", path.display());
            }
            Ok(Status::Ok)
        }
        Command::Synth { spec, out } => {
            let text = fs::read_to_string(&spec).map_err(|e| Error::io(&spec, e))?;
            let (spec, seed) = parse_synth_spec(&text)?;
            let data = synth_generate(&spec, seed)?;
            pgm::export_dataset(&data, &SYNTH_CLASSES, &out)?;
            println!("{} images written to {}", data.len(), out.display());
            Ok(Status::Ok)
        }
    }
}

fn run_id(cfg: &ExperimentConfig) -> String {
    cfg.out_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| format!("seed{}", cfg.seed))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Full training run into `cfg.out_dir`. The best checkpoint is rewritten on
/// every improvement, so a numerical failure leaves the last good one behind.
pub fn train(cfg: &ExperimentConfig) -> Result<(Splits, experiment::RunOutput)> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let out = train_on(cfg, &splits)?;
    Ok((splits, out))
}

/// [`train`] on already materialised splits.
pub fn train_on(cfg: &ExperimentConfig, splits: &Splits) -> Result<experiment::RunOutput> {
    cfg.validate()?;
    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    let cfg_path = dir.join("config.txt");
    fs::write(&cfg_path, cfg.to_kv_string()).map_err(|e| Error::io(&cfg_path, e))?;
    let ckpt_path = dir.join("best.ckpt");
    let run_path = dir.join("run.csv");
    let out = run_training(
        cfg,
        splits,
        |_, best| match best {
            Some(c) => c.save(&ckpt_path),
            None => Ok(()),
        },
        |records| {
            if let Ok(mut w) = report::create(&run_path) {
                let _ = report::write_run_records(&mut w, records);
            }
        },
    )?;
    report::write_run_records(&mut report::create(&run_path)?, &out.records)?;
    let id = run_id(cfg);
    let mut rows = Vec::new();
    for split in SplitName::ALL {
        if let Ok(data) = splits.get(split) {
            rows.push((id.clone(), split, experiment::evaluate_split(&out.best, data)?.metrics()?));
        }
    }
    report::write_metrics(&mut report::create(dir.join("metrics.csv"))?, &rows)?;
    log::info!("trained {} epochs in {:.1}s; best epoch {}", out.records.len(), out.seconds, out.best.epoch);
    Ok(out)
}

pub fn ablate(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<experiment::AblationRow>> {
    cfg.validate()?;
    ensure_dir(&cfg.out_dir)?;
    let rows = experiment::ablate(cfg, seeds, |r| {
        log::info!("seed {} {} {} accuracy {:.4}", r.seed, r.variant.name(), r.split, r.metrics.accuracy)
    })?;
    report::write_ablation(&mut report::create(cfg.out_dir.join("ablation.csv"))?, &rows)?;
    report::write_ablation_summary(&mut report::create(cfg.out_dir.join("ablation_summary.csv"))?, &rows)?;
    report::write_ablation_summary(&mut csv::Writer::from_writer(io::stdout()), &rows)?;
    Ok(rows)
}

fn heatmap_stem(h: &Heatmap) -> String {
    let stage = h.stage.to_string().replace('-', "m");
    format!("{}_stage_{}_class{}", h.method.name(), stage, h.class)
}

/// Writes `<stem>.pgm`, `<stem>.rft` and `<stem>_overlay.pgm` per method;
/// returns the paths written.
pub fn gradcam(
    ckpt: &Checkpoint,
    image: &Tensor<f32>,
    class: usize,
    stage: Stage,
    methods: &[CamMethod],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let model = ckpt.model.cast::<f64>();
    let x = image.cast::<f64>();
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let mut written = Vec::new();
    for &method in methods {
        let hm = explain(&model, &x, class, stage, method)?;
        let stem = heatmap_stem(&hm);
        let raw = out.join(format!("{}.pgm", stem));
        pgm::save_pgm(&raw, &hm.values)?;
        let exact = out.join(format!("{}.rft", stem));
        tensor_io::save_tensor(&exact, &hm.values)?;
        let up = hm.upsample(h, w)?;
        let blend = up.zip_map(&Tensor::new(&[h, w], x.data()[..h * w].to_vec())?, |m, v| 0.5 * m + 0.5 * v)?;
        let overlay = out.join(format!("{}_overlay.pgm", stem));
        pgm::save_pgm(&overlay, &blend)?;
        written.extend([raw, exact, overlay]);
    }
    Ok(written)
}

/// `key = value` spec for `synth`: size, channels, per_class, noise_sigma,
/// band_min, band_max, shift (none|ood), ood_contrast_gain,
/// ood_contrast_offset, ood_noise_factor, ood_thickness_factor and seed.
pub fn parse_synth_spec(text: &str) -> Result<(SyntheticSpec, u64)> {
    let mut spec = SyntheticSpec::default();
    let mut seed = 0u64;
    let num = |k: &str, v: &str| -> Result<f64> { v.parse().map_err(|_| Error::config(format!("{}: cannot parse '{}'", k, v))) };
    let int = |k: &str, v: &str| -> Result<usize> { v.parse().map_err(|_| Error::config(format!("{}: cannot parse '{}'", k, v))) };
    parse_kv_lines(text, |k, v| {
        match k {
            "size" => spec.size = int(k, v)?,
            "channels" => spec.channels = int(k, v)?,
            "per_class" => spec.per_class = int(k, v)?,
            "noise_sigma" => spec.noise_sigma = num(k, v)?,
            "band_min" => spec.band_thickness.0 = num(k, v)?,
            "band_max" => spec.band_thickness.1 = num(k, v)?,
            "ood_contrast_gain" => spec.ood.contrast_gain = num(k, v)?,
            "ood_contrast_offset" => spec.ood.contrast_offset = num(k, v)?,
            "ood_noise_factor" => spec.ood.noise_factor = num(k, v)?,
            "ood_thickness_factor" => spec.ood.thickness_factor = num(k, v)?,
            "shift" => {
                spec.shift = match v {
                    "none" => Shift::None,
                    "ood" => Shift::Ood,
                    _ => return Err(Error::config(format!("shift: expected none or ood, got '{}'", v))),
                }
            }
            "seed" => seed = v.parse().map_err(|_| Error::config(format!("seed: cannot parse '{}'", v)))?,
            _ => return Err(Error::config(format!("unknown key '{}'", k))),
        }
        Ok(())
    })?;
    spec.validate()?;
    Ok((spec, seed))
}
