//! CSV tables: per-epoch run records, split metrics and ablation results.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rfrl_core::gradcheck::CheckOutcome;
use rfrl_core::metrics::Metrics;
use rfrl_core::train::EpochRecord;

use crate::error::{Error, Result};
use crate::experiment::{median_accuracy, AblationRow, SplitName, Variant};

pub const RUN_HEADER: [&str; 15] = [
    "epoch",
    "lr",
    "train_l_sup",
    "train_l_un",
    "train_l_frs",
    "train_total",
    "train_accuracy",
    "val_l_sup",
    "val_l_un",
    "val_l_frs",
    "val_total",
    "val_accuracy",
    "val_sensitivity",
    "val_specificity",
    "improved",
];

pub const METRICS_HEADER: [&str; 5] = ["run_id", "split", "accuracy", "sensitivity", "specificity"];

pub fn create(path: impl AsRef<Path>) -> Result<csv::Writer<File>> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_run_records<W: Write>(w: &mut csv::Writer<W>, records: &[EpochRecord]) -> Result<()> {
    w.write_record(RUN_HEADER)?;
    for r in records {
        let (t, v, m) = (&r.train, &r.val, &r.val_metrics);
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            t.l_sup.to_string(),
            t.l_un.to_string(),
            t.l_frs.to_string(),
            t.total.to_string(),
            r.train_accuracy.to_string(),
            v.l_sup.to_string(),
            v.l_un.to_string(),
            v.l_frs.to_string(),
            v.total.to_string(),
            m.accuracy.to_string(),
            m.sensitivity.to_string(),
            m.specificity.to_string(),
            r.improved.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))
}

pub fn write_metrics<W: Write>(w: &mut csv::Writer<W>, rows: &[(String, SplitName, Metrics)]) -> Result<()> {
    w.write_record(METRICS_HEADER)?;
    for (run, split, m) in rows {
        w.write_record([
            run.clone(),
            split.to_string(),
            m.accuracy.to_string(),
            m.sensitivity.to_string(),
            m.specificity.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))
}

/// One row per (seed, variant, split) with deltas against the
/// classifier-only run of the same seed and split.
pub fn write_ablation<W: Write>(w: &mut csv::Writer<W>, rows: &[AblationRow]) -> Result<()> {
    w.write_record([
        "seed",
        "variant",
        "split",
        "best_epoch",
        "accuracy",
        "sensitivity",
        "specificity",
        "delta_accuracy",
        "delta_sensitivity",
        "delta_specificity",
    ])?;
    for r in rows {
        let base = rows
            .iter()
            .find(|b| b.seed == r.seed && b.split == r.split && b.variant == Variant::ClassifierOnly)
            .map(|b| &b.metrics);
        let delta = |f: fn(&Metrics) -> f64| base.map(|b| (f(&r.metrics) - f(b)).to_string()).unwrap_or_default();
        w.write_record([
            r.seed.to_string(),
            r.variant.name().to_string(),
            r.split.to_string(),
            r.best_epoch.to_string(),
            r.metrics.accuracy.to_string(),
            r.metrics.sensitivity.to_string(),
            r.metrics.specificity.to_string(),
            delta(|m| m.accuracy),
            delta(|m| m.sensitivity),
            delta(|m| m.specificity),
        ])?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))
}

/// Median accuracy over seeds per variant and split.
pub fn write_ablation_summary<W: Write>(w: &mut csv::Writer<W>, rows: &[AblationRow]) -> Result<()> {
    w.write_record(["variant", "split", "seeds", "median_accuracy", "median_delta_accuracy"])?;
    for split in [SplitName::Test, SplitName::Ood] {
        let base = median_accuracy(rows, Variant::ClassifierOnly, split);
        for variant in Variant::ALL {
            let Some(med) = median_accuracy(rows, variant, split) else { continue };
            let seeds = rows.iter().filter(|r| r.variant == variant && r.split == split).count();
            w.write_record([
                variant.name().to_string(),
                split.to_string(),
                seeds.to_string(),
                med.to_string(),
                base.map(|b| (med - b).to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("csv output", e))
}

pub fn write_gradcheck<W: Write>(w: &mut csv::Writer<W>, outcomes: &[CheckOutcome]) -> Result<()> {
    w.write_record(["op", "max_rel_err", "cases", "status", "error"])?;
    for o in outcomes {
        w.write_record([
            o.name.clone(),
            format!("{:.3e}", o.max_rel_err),
            o.cases.to_string(),
            if o.passed { "pass" } else { "fail" }.to_string(),
            o.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(a: f64) -> Metrics {
        Metrics { accuracy: a, sensitivity: a, specificity: a, skipped: vec![] }
    }

    #[test]
    fn metrics_table_has_header() {
        let mut w = csv::Writer::from_writer(Vec::new());
        write_metrics(&mut w, &[("r1".into(), SplitName::Ood, m(0.5))]).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text, "run_id,split,accuracy,sensitivity,specificity\nr1,ood,0.5,0.5,0.5\n");
    }

    #[test]
    fn ablation_deltas_and_medians() {
        let rows: Vec<AblationRow> = [(1, Variant::ClassifierOnly, 0.5), (1, Variant::Rfrl, 0.75), (2, Variant::ClassifierOnly, 0.25), (2, Variant::Rfrl, 0.25)]
            .into_iter()
            .map(|(seed, variant, a)| AblationRow { seed, variant, split: SplitName::Ood, metrics: m(a), best_epoch: 1 })
            .collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        write_ablation(&mut w, &rows).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert!(text.lines().nth(2).unwrap().starts_with("1,rfrl,ood,1,0.75,0.75,0.75,0.25,"), "{}", text);
        let mut w = csv::Writer::from_writer(Vec::new());
        write_ablation_summary(&mut w, &rows).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert!(text.contains("rfrl,ood,2,0.5,0.125"), "{}", text);
    }
}
