//! Confusion matrices and macro-averaged one-vs-rest accuracy, sensitivity
//! and specificity.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, Result};

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_rows(rows: &[&[u64]]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(contract_err!("confusion matrix rows must all have {} entries", c));
        }
        Ok(ConfusionMatrix { classes: c, counts: rows.iter().flat_map(|r| r.iter().copied()).collect() })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(contract_err!("class index ({}, {}) out of range for {} classes", truth, pred, self.classes));
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks_exact(self.classes.max(1))
    }

    /// Sum of diagonal over total; `None` when empty.
    pub fn overall_accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (0..self.classes).map(|k| self.get(k, k)).sum::<u64>() as f64 / total as f64)
    }

    /// `(tp, fp, fn, tn)` for class `k` against the rest.
    pub fn one_vs_rest(&self, k: usize) -> (u64, u64, u64, u64) {
        let tp = self.get(k, k);
        let row: u64 = (0..self.classes).map(|p| self.get(k, p)).sum();
        let col: u64 = (0..self.classes).map(|t| self.get(t, k)).sum();
        let fp = col - tp;
        let fn_ = row - tp;
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(contract_err!("{} predictions for {} labels", preds.len(), labels.len()));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in preds.iter().zip(labels) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Sensitivity,
    Specificity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Classes left out of a macro mean because their denominator was zero.
    pub skipped: Vec<(MetricKind, usize)>,
}

/// Exact mean of fractions, rounded once. Falls back to floating point if
/// the common denominator would overflow.
#[derive(Debug, Clone, Copy)]
struct FractionMean {
    num: u128,
    den: u128,
    count: u64,
    float_sum: f64,
    exact: bool,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl FractionMean {
    fn new() -> Self {
        FractionMean { num: 0, den: 1, count: 0, float_sum: 0.0, exact: true }
    }

    fn push(&mut self, num: u64, den: u64) {
        self.count += 1;
        self.float_sum += num as f64 / den as f64;
        if !self.exact {
            return;
        }
        let (n, d) = (num as u128, den as u128);
        let g = gcd(self.den, d);
        let merged = (self.den / g)
            .checked_mul(d)
            .and_then(|den| {
                let a = self.num.checked_mul(d / g)?;
                let b = n.checked_mul(self.den / g)?;
                Some((a.checked_add(b)?, den))
            });
        match merged {
            Some((num, den)) => {
                let g = gcd(num, den).max(1);
                self.num = num / g;
                self.den = den / g;
            }
            None => self.exact = false,
        }
    }

    fn mean(&self) -> Option<f64> {
        if self.count == 0 {
            return None;
        }
        if self.exact {
            if let Some(den) = self.den.checked_mul(self.count as u128) {
                let g = gcd(self.num, den).max(1);
                let (n, d) = (self.num / g, den / g);
                // both exactly representable: a single correctly rounded division
                if n < (1 << 53) && d < (1 << 53) {
                    return Some(n as f64 / d as f64);
                }
            }
        }
        Some(self.float_sum / self.count as f64)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 || cm.classes() == 0 {
        return Err(contract_err!("metrics of an empty confusion matrix"));
    }
    let (mut acc, mut sens, mut spec) = (FractionMean::new(), FractionMean::new(), FractionMean::new());
    let mut skipped = Vec::new();
    for k in 0..cm.classes() {
        let (tp, fp, fn_, tn) = cm.one_vs_rest(k);
        acc.push(tp + tn, total);
        if tp + fn_ > 0 {
            sens.push(tp, tp + fn_);
        } else {
            skipped.push((MetricKind::Sensitivity, k));
        }
        if tn + fp > 0 {
            spec.push(tn, tn + fp);
        } else {
            skipped.push((MetricKind::Specificity, k));
        }
    }
    for (kind, k) in &skipped {
        log::warn!("class {} has no samples for {:?}; excluded from the macro mean", k, kind);
    }
    Ok(Metrics {
        accuracy: acc.mean().unwrap_or(0.0),
        sensitivity: sens.mean().unwrap_or(0.0),
        specificity: spec.mean().unwrap_or(0.0),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.get(t, p) > 0, t == p);
            }
        }
        let cm = confusion(&[0, 1], &[1, 1], 2).unwrap();
        assert_eq!(cm, ConfusionMatrix::from_rows(&[&[0, 0], &[1, 1]]).unwrap());
        let empty = confusion(&[], &[], 3).unwrap();
        assert_eq!(empty, ConfusionMatrix::new(3));
        assert!(matches!(confusion(&[3], &[0], 3), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn binary_hand_example_is_exact() {
        let cm = ConfusionMatrix::from_rows(&[&[40, 10], &[5, 45]]).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.sensitivity, m.specificity), (0.85, 0.85, 0.85));
    }

    #[test]
    fn perfect_and_degenerate() {
        let cm = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.sensitivity, m.specificity), (1.0, 1.0, 1.0));

        // everything predicted as class 0
        let cm = confusion(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(metrics(&cm).unwrap().sensitivity, 0.5);

        assert!(metrics(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn absent_class_is_skipped() {
        let cm = confusion(&[0, 1, 1], &[0, 1, 1], 3).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!(m.sensitivity, 1.0);
        assert_eq!(m.skipped, [(MetricKind::Sensitivity, 2)]);
    }
}
