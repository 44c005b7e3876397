//! Seeded mini-batch training with plateau scheduling and best-validation
//! selection, plus batched evaluation.

use alloc::vec::Vec;

use crate::data::{augment, stack, AugmentConfig, Dataset};
use crate::error::{config_err, contract_err, Result};
use crate::losses::{self, FrsNorm, LossReport};
use crate::metrics::{self, ConfusionMatrix, Metrics};
use crate::model::{argmax_rows, BoundParams, ForwardTaps, LossSwitches, RfrlModel};
use crate::optim::{AdamState, PlateauState, DEFAULT_LR};
use crate::rng::{streams, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_BATCH: usize = 4;
pub const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub switches: LossSwitches,
    pub frs_norm: FrsNorm,
    pub augment: AugmentConfig,
    /// Seeds shuffling and augmentation.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            lr: DEFAULT_LR,
            switches: LossSwitches::ALL,
            frs_norm: FrsNorm::MeanSquared,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err!("epochs and batch size must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(config_err!("learning rate must be positive, got {}", self.lr));
        }
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub lr: f64,
    /// Mean over the epoch's (augmented) training batches.
    pub train: LossReport,
    pub train_accuracy: f64,
    pub val: LossReport,
    pub val_metrics: Metrics,
    /// Whether this epoch became the best-validation snapshot.
    pub improved: bool,
}

/// Parameters and optimizer state at one point of training.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub model: RfrlModel<f32>,
    pub adam: AdamState<f32>,
    pub val_loss: f64,
}

/// Loss and confusion matrix of a model on a dataset, without updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: LossReport,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn metrics(&self) -> Result<Metrics> {
        metrics::metrics(&self.confusion)
    }
}

fn run_heads<T: Real>(
    model: &RfrlModel<T>,
    tape: &mut Tape<T>,
    params: BoundParams,
    x: Var,
    switches: LossSwitches,
) -> Result<ForwardTaps> {
    if switches.needs_decoder() {
        model.forward_with(tape, params, x)
    } else {
        model.forward_classifier_with(tape, params, x)
    }
}

/// Sample-weighted mean losses and predictions over `data`.
pub fn evaluate<T: Real>(
    model: &RfrlModel<T>,
    data: &Dataset,
    switches: LossSwitches,
    norm: FrsNorm,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(contract_err!("cannot evaluate on an empty dataset"));
    }
    let classes = model.config().num_classes;
    let mut loss = LossReport::default();
    let mut predictions = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, labels) = data.batch(chunk)?;
        let mut tape = Tape::new();
        let params = model.bind_frozen(&mut tape);
        let xv = tape.constant(x.cast::<T>());
        let taps = run_heads(model, &mut tape, params, xv, switches)?;
        let onehot = losses::one_hot::<T>(&labels, classes)?;
        let (_, report) = losses::total_loss(&mut tape, &taps, xv, &onehot, switches, norm)?;
        loss.accumulate(&report, chunk.len() as f64);
        predictions.extend(argmax_rows(tape.value(taps.probs)));
    }
    let confusion = metrics::confusion(&predictions, &data.labels(), classes)?;
    Ok(Evaluation { loss: loss.scaled(1.0 / data.len() as f64), confusion, predictions })
}

pub struct Trainer {
    pub model: RfrlModel<f32>,
    pub adam: AdamState<f32>,
    pub plateau: PlateauState,
    pub config: TrainConfig,
    shuffle_rng: Rng,
    augment_rng: Rng,
    records: Vec<EpochRecord>,
    best: Option<Snapshot>,
}

impl Trainer {
    pub fn new(model: RfrlModel<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.params().tensors(), config.lr);
        Ok(Trainer {
            shuffle_rng: Rng::stream(config.seed, streams::SHUFFLE),
            augment_rng: Rng::stream(config.seed, streams::AUGMENT),
            model,
            adam,
            plateau: PlateauState::default(),
            config,
            records: Vec::new(),
            best: None,
        })
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn best(&self) -> Option<&Snapshot> {
        self.best.as_ref()
    }

    /// One optimizer step on a stacked batch; returns its loss report.
    pub fn step(&mut self, x: &Tensor<f32>, labels: &[usize]) -> Result<(LossReport, Vec<usize>)> {
        let cfg = &self.config;
        let mut tape = Tape::new();
        let params = self.model.bind(&mut tape);
        let param_vars = params.vars().to_vec();
        let xv = tape.constant(x.clone());
        let taps = run_heads(&self.model, &mut tape, params, xv, cfg.switches)?;
        let onehot = losses::one_hot::<f32>(labels, self.model.config().num_classes)?;
        let (vars, report) = losses::total_loss(&mut tape, &taps, xv, &onehot, cfg.switches, cfg.frs_norm)?;
        let preds = argmax_rows(tape.value(taps.probs));
        let mut grads = tape.backward(vars.total)?;
        let grads: Vec<Tensor<f32>> = param_vars
            .iter()
            .zip(self.model.params().tensors())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        self.adam.step(self.model.params_mut().tensors_mut(), &grads)?;
        Ok((report, preds))
    }

    /// Shuffles, drops the last incomplete batch, augments and steps through
    /// `train`, then evaluates on `val` and updates the schedule.
    pub fn train_epoch(&mut self, train: &Dataset, val: &Dataset) -> Result<&EpochRecord> {
        let bs = self.config.batch_size;
        if train.len() < bs {
            return Err(contract_err!("training set of {} samples is smaller than one batch of {}", train.len(), bs));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        self.shuffle_rng.shuffle(&mut order);
        let lr = self.adam.lr;
        let mut sum = LossReport::default();
        let (mut seen, mut correct) = (0usize, 0usize);
        for chunk in order.chunks_exact(bs) {
            let augmented = chunk
                .iter()
                .map(|&i| augment(train.get(i), &self.config.augment, &mut self.augment_rng))
                .collect::<Result<Vec<_>>>()?;
            let (x, labels) = stack(&augmented)?;
            let (report, preds) = self.step(&x, &labels)?;
            sum.accumulate(&report, chunk.len() as f64);
            correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            seen += chunk.len();
        }
        let eval = evaluate(&self.model, val, self.config.switches, self.config.frs_norm)?;
        let val_metrics = eval.metrics()?;
        let val_loss = eval.loss.total;
        let improved = self.best.as_ref().map_or(true, |b| val_loss < b.val_loss);
        let epoch = self.records.len() + 1;
        if improved {
            self.best = Some(Snapshot { epoch, model: self.model.clone(), adam: self.adam.clone(), val_loss });
        }
        self.adam.lr = self.plateau.update(val_loss, lr);
        log::info!(
            "epoch {} lr {:.1e} train {:.4} val {:.4} val acc {:.4}",
            epoch,
            lr,
            sum.total / seen as f64,
            val_loss,
            val_metrics.accuracy
        );
        self.records.push(EpochRecord {
            epoch,
            lr,
            train: sum.scaled(1.0 / seen as f64),
            train_accuracy: correct as f64 / seen as f64,
            val: eval.loss,
            val_metrics,
            improved,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    /// Runs all configured epochs, calling `observer` after each. Stops at the
    /// first error; the best snapshot so far stays available via [`Trainer::best`].
    pub fn fit(
        &mut self,
        train: &Dataset,
        val: &Dataset,
        mut observer: impl FnMut(&EpochRecord, &Trainer) -> Result<()>,
    ) -> Result<()> {
        while self.records.len() < self.config.epochs {
            self.train_epoch(train, val)?;
            observer(self.records.last().expect("epoch recorded"), self)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SyntheticSpec};
    use crate::model::ModelConfig;

    fn tiny() -> (RfrlModel<f32>, Dataset, Dataset) {
        let cfg = ModelConfig { height: 16, width: 16, n_stages: 2, stem_channels: 4, stage_channels: alloc::vec![6, 8], ..Default::default() };
        let spec = SyntheticSpec { size: 16, per_class: 4, ..Default::default() };
        let model = RfrlModel::build(&cfg, 1).unwrap();
        (model, synth_generate(&spec, 1).unwrap(), synth_generate(&spec, 2).unwrap())
    }

    #[test]
    fn training_is_deterministic() {
        let (model, train, val) = tiny();
        let cfg = TrainConfig { epochs: 2, lr: 1e-3, ..Default::default() };
        let run = || {
            let mut t = Trainer::new(model.clone(), cfg.clone()).unwrap();
            t.fit(&train, &val, |_, _| Ok(())).unwrap();
            (t.model, t.records)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.len(), 2);
        assert!(ra[0].improved);
    }

    #[test]
    fn disabled_heads_leave_their_parameters_alone() {
        let (model, train, val) = tiny();
        let cfg = TrainConfig { epochs: 1, lr: 1e-2, switches: LossSwitches::CLASSIFIER_ONLY, ..Default::default() };
        let mut t = Trainer::new(model.clone(), cfg).unwrap();
        t.fit(&train, &val, |_, _| Ok(())).unwrap();
        let rec = &t.records()[0];
        assert_eq!((rec.train.l_un, rec.train.l_frs, rec.val.l_un, rec.val.l_frs), (0.0, 0.0, 0.0, 0.0));
        for ((name, before), (_, after)) in model.params().iter().zip(t.model.params().iter()) {
            let frozen = name.starts_with("attn") || name.starts_with("dec") || name.starts_with("recon");
            assert_eq!(frozen, before == after, "{}", name);
        }
    }

    #[test]
    fn rejects_bad_settings() {
        let (model, train, val) = tiny();
        assert!(Trainer::new(model.clone(), TrainConfig { batch_size: 0, ..Default::default() }).is_err());
        let mut t = Trainer::new(model, TrainConfig { batch_size: 64, ..Default::default() }).unwrap();
        assert!(t.train_epoch(&train, &val).is_err());
    }

    #[test]
    fn evaluation_counts_every_sample() {
        let (model, _, val) = tiny();
        let e = evaluate(&model, &val, LossSwitches::ALL, FrsNorm::MeanSquared).unwrap();
        assert_eq!(e.confusion.total(), val.len() as u64);
        assert_eq!(e.predictions.len(), val.len());
        assert!(e.loss.l_sup > 0.0 && e.loss.l_un > 0.0);
    }
}
