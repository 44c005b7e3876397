use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rfrl::tensor_io::load_tensor;

const TINY: &str = "\
# small and quick
seed = 3
model.height = 16
model.width = 16
model.n_stages = 2
model.stem_channels = 4
model.stage_channels = 6, 8
train.epochs = 2
train.lr = 1e-3
data.train_per_class = 4
data.val_per_class = 2
data.test_per_class = 2
data.ood_per_class = 2
";

fn rfrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfrl")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("exp.cfg");
    fs::write(&p, format!("{}{}", TINY, extra)).unwrap();
    p.to_str().unwrap().to_string()
}

fn train(dir: &Path, name: &str, extra: &str) -> std::path::PathBuf {
    let cfg = write_config(dir, extra);
    let out = dir.join(name);
    let o = rfrl(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn training_is_reproducible_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(dir.path(), "a", "");
    let b = train(dir.path(), "b", "");
    let first: Vec<Vec<u8>> = ["run.csv", "best.ckpt", "metrics.csv"].iter().map(|f| fs::read(a.join(f)).unwrap()).collect();
    train(dir.path(), "a", "");
    for (f, before) in ["run.csv", "best.ckpt", "metrics.csv"].iter().zip(first) {
        assert_eq!(fs::read(a.join(f)).unwrap(), before, "{}", f);
    }
    let metrics = |p: &Path| fs::read_to_string(p.join("metrics.csv")).unwrap().replace("\nb,", "\na,");
    assert_eq!(metrics(&a), metrics(&b));
    let text = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(text.starts_with("run_id,split,accuracy,sensitivity,specificity\n"));
    assert_eq!(text.lines().count(), 5);
    let run = fs::read_to_string(a.join("run.csv")).unwrap();
    assert_eq!(run.lines().count(), 3);
}

#[test]
fn supervised_only_runs_report_zero_auxiliary_losses() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), "sup", "loss.unsupervised = false\nloss.frs = false\n");
    let mut r = csv::Reader::from_path(out.join("run.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let cols: Vec<usize> = ["train_l_un", "train_l_frs", "val_l_un", "val_l_frs"]
        .iter()
        .map(|c| headers.iter().position(|h| h == *c).unwrap())
        .collect();
    for rec in r.records() {
        let rec = rec.unwrap();
        for &c in &cols {
            assert_eq!(rec[c].parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn eval_is_repeatable_and_matches_training_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), "run", "");
    let ckpt = out.join("best.ckpt");
    let first = rfrl(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--split", "ood"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = rfrl(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--split", "ood"]);
    assert_eq!(first.stdout, second.stdout);
    let stdout = String::from_utf8(first.stdout).unwrap();
    let row = stdout.lines().nth(1).unwrap();
    let trained = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(trained.lines().any(|l| l == row), "{} not in {}", row, trained);
}

#[test]
fn bad_inputs_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "model.depth = 4\n");
    let out = dir.path().join("never");
    let o = rfrl(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key"));
    assert!(!out.exists(), "config errors must stop before any output");

    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"RFRLCKPT\x01\x00garbage").unwrap();
    let o = rfrl(&["eval", "--ckpt", junk.to_str().unwrap(), "--split", "test"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("format error"));

    let o = rfrl(&["eval", "--ckpt", junk.to_str().unwrap(), "--split", "holdout"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "train.lr = 1e30\n");
    let o = rfrl(&["train", "--config", &cfg, "--out", dir.path().join("boom").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("numerical failure"));
}

#[test]
fn gradcam_writes_every_requested_method() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "run", "");
    let ckpt = run.join("best.ckpt");
    let maps = dir.path().join("maps");
    let o = rfrl(&[
        "gradcam", "--ckpt", ckpt.to_str().unwrap(), "--index", "0", "--split", "test",
        "--class", "1", "--stage", "n", "--method", "all", "--out", maps.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for m in ["cam", "campp"] {
        let exact = load_tensor(maps.join(format!("{}_stage_n_class1.rft", m))).unwrap();
        assert_eq!(exact.shape(), &[4, 4]);
        assert!(maps.join(format!("{}_stage_n_class1.pgm", m)).exists());
        assert!(maps.join(format!("{}_stage_n_class1_overlay.pgm", m)).exists());
    }

    let o = rfrl(&["gradcam", "--ckpt", ckpt.to_str().unwrap(), "--index", "0", "--class", "0", "--stage", "n-3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("contract violation"));
}

#[test]
fn gradcheck_reports_every_operation_once() {
    let o = rfrl(&["gradcheck", "--seeds", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("op,max_rel_err,cases,status,error"));
    let names: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    assert!(names.contains(&"conv2d_transpose") && names.contains(&"rfrl_model_total_loss"));
    assert!(text.lines().skip(1).all(|l| l.contains(",pass,")));
}

#[test]
fn synth_exports_directory_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    fs::write(&spec, "size = 8\nper_class = 2\nshift = ood\nseed = 5\n").unwrap();
    let out = dir.path().join("data");
    let o = rfrl(&["synth", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (data, names) = rfrl::pgm::load_dataset(&out, 1, 8, 8).unwrap();
    assert_eq!(names, ["drusen", "fluid", "normal"]);
    assert_eq!(data.class_counts(), [2, 2, 2]);
}
