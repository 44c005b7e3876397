//! Supervised, reconstruction and feature-representation-similarity losses
//! and their unweighted sum.

use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::model::{ForwardTaps, LossSwitches};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Per-pair distance used by the similarity loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrsNorm {
    /// Mean of squared differences.
    #[default]
    MeanSquared,
    /// Mean of absolute differences.
    MeanAbsolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l_sup: f64,
    pub l_un: f64,
    pub l_frs: f64,
    pub total: f64,
}

impl LossReport {
    /// Unit-weight sum; heads switched off contribute exactly zero.
    pub fn combine(l_sup: f64, l_un: f64, l_frs: f64, switches: LossSwitches) -> Self {
        let pick = |on: bool, v: f64| if on { v } else { 0.0 };
        let (l_sup, l_un, l_frs) =
            (pick(switches.supervised, l_sup), pick(switches.unsupervised, l_un), pick(switches.frs, l_frs));
        LossReport { l_sup, l_un, l_frs, total: l_sup + l_un + l_frs }
    }

    /// Sample-weighted accumulation used to average over batches.
    pub fn accumulate(&mut self, other: &LossReport, weight: f64) {
        self.l_sup += other.l_sup * weight;
        self.l_un += other.l_un * weight;
        self.l_frs += other.l_frs * weight;
        self.total += other.total * weight;
    }

    pub fn scaled(&self, k: f64) -> LossReport {
        LossReport { l_sup: self.l_sup * k, l_un: self.l_un * k, l_frs: self.l_frs * k, total: self.total * k }
    }
}

pub fn cross_entropy<T: Real>(tape: &mut Tape<T>, probs: Var, labels: &Tensor<T>) -> Result<Var> {
    tape.cross_entropy(probs, labels)
}

pub fn mse<T: Real>(tape: &mut Tape<T>, x: Var, x_rec: Var) -> Result<Var> {
    tape.mse(x, x_rec)
}

/// Mean over pairs of the distance between `enc[i]` and `dec[N-1-i]`.
pub fn frs_loss<T: Real>(tape: &mut Tape<T>, enc: &[Var], dec: &[Var], norm: FrsNorm) -> Result<Var> {
    if enc.len() != dec.len() || enc.is_empty() {
        return Err(shape_err!("frs_loss needs equal non-empty lists, got {} and {}", enc.len(), dec.len()));
    }
    let n = enc.len();
    let mut terms = Vec::with_capacity(n);
    for (i, &e) in enc.iter().enumerate() {
        let d = dec[n - 1 - i];
        if tape.value(e).shape() != tape.value(d).shape() {
            return Err(shape_err!(
                "frs pair {}: encoder {:?} vs decoder {:?}",
                i,
                tape.value(e).shape(),
                tape.value(d).shape()
            ));
        }
        terms.push(match norm {
            FrsNorm::MeanSquared => tape.mse(e, d)?,
            FrsNorm::MeanAbsolute => tape.mae(e, d)?,
        });
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    tape.scale(acc, T::from_f64(1.0 / n as f64))
}

/// Loss nodes recorded for one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub sup: Option<Var>,
    pub un: Option<Var>,
    pub frs: Option<Var>,
    /// Scalar to differentiate. A constant zero when every head is off.
    pub total: Var,
}

/// Records the enabled heads and their sum; returns the nodes and a report.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    taps: &ForwardTaps,
    x: Var,
    labels: &Tensor<T>,
    switches: LossSwitches,
    norm: FrsNorm,
) -> Result<(LossVars, LossReport)> {
    let sup = switches.supervised.then(|| cross_entropy(tape, taps.probs, labels)).transpose()?;
    let un = if switches.unsupervised {
        let recon = taps.recon.ok_or_else(|| shape_err!("reconstruction head was not run"))?;
        Some(mse(tape, x, recon)?)
    } else {
        None
    };
    let frs = if switches.frs {
        let (enc, dec) = taps.frs_pairs().ok_or_else(|| shape_err!("decoder features were not recorded"))?;
        Some(frs_loss(tape, enc, dec, norm)?)
    } else {
        None
    };
    let mut total: Option<Var> = None;
    for v in [sup, un, frs].into_iter().flatten() {
        total = Some(match total {
            None => v,
            Some(acc) => tape.add(acc, v)?,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(T::zero())),
    };
    let val = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).data()[0].as_f64());
    let report = LossReport::combine(val(sup), val(un), val(frs), switches);
    Ok((LossVars { sup, un, frs, total }, report))
}

fn eager_scalar<T: Real>(build: impl FnOnce(&mut Tape<T>) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = build(&mut tape)?;
    Ok(tape.value(v).data()[0].as_f64())
}

/// Cross-entropy of plain tensors.
pub fn cross_entropy_value<T: Real>(probs: &Tensor<T>, labels: &Tensor<T>) -> Result<f64> {
    eager_scalar(|t| {
        let p = t.constant(probs.clone());
        t.cross_entropy(p, labels)
    })
}

pub fn mse_value<T: Real>(x: &Tensor<T>, x_rec: &Tensor<T>) -> Result<f64> {
    eager_scalar(|t| {
        let a = t.constant(x.clone());
        let b = t.constant(x_rec.clone());
        t.mse(a, b)
    })
}

pub fn frs_value<T: Real>(enc: &[Tensor<T>], dec: &[Tensor<T>], norm: FrsNorm) -> Result<f64> {
    eager_scalar(|t| {
        let e: Vec<Var> = enc.iter().map(|x| t.constant(x.clone())).collect();
        let d: Vec<Var> = dec.iter().map(|x| t.constant(x.clone())).collect();
        frs_loss(t, &e, &d, norm)
    })
}

/// One-hot `[B, c]` encoding of class indices.
pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = alloc::vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(crate::error::contract_err!("label {} out of range for {} classes", l, classes));
        }
        data[i * classes + l] = T::one();
    }
    Tensor::new(&[labels.len(), classes], data)
}
