use std::path::{Path, PathBuf};

use assert_cmd::Command;
use inception_core::audio::write_wav_pcm16;
use inception_core::model::{build, save_checkpoint, Arch, ModelConfig, TrainingMeta};
use serde_json::Value;

fn bin() -> Command {
    Command::cargo_bin("inucleus").unwrap()
}

fn stdout_json(args: &[&str]) -> Value {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn count_params_matches_derived_totals() {
    assert_eq!(stdout_json(&["count-params", "--arch", "inception"])["count"], 289_450);
    assert_eq!(stdout_json(&["count-params", "--arch", "inception_fa"])["count"], 789_162);
    let bn = stdout_json(&["count-params", "--arch", "inception_bn", "--include-non-trainable"]);
    assert_eq!(bn["count"], 292_050);
    assert_eq!(bn["trainable"], 290_750);
    let fi = stdout_json(&["count-params", "--arch", "inception_fi"]);
    assert_eq!(fi["count"], 593_706);
    assert!(fi["note"].as_str().unwrap().contains("479K"));
}

#[test]
fn usage_errors_exit_2() {
    let out = bin().args(["count-params", "--arch", "bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("inception_fa") && err.contains("inception_bn"), "{err}");

    bin().args(["train", "--arch", "inception"]).assert().code(2);
    bin().args(["train", "--manifest", "/nonexistent/manifest.csv"]).assert().code(2);
    bin().args(["count-params", "--arch", "inception", "--frobnicate"]).assert().code(2);
}

fn synth(dir: &Path, classes: &str, per_class: &str, clip_len: &str) -> PathBuf {
    bin()
        .args(["synth-data", "--out", p(dir), "--classes", classes, "--per-class", per_class, "--clip-len", clip_len, "--folds", "2", "--seed", "3"])
        .assert()
        .success();
    dir.join("manifest.csv")
}

fn train_mini(manifest: &Path, out: &Path, seed: &str, epochs: &str) {
    bin()
        .args([
            "train", "--arch", "inception_mini", "--manifest", p(manifest), "--test-folds", "2", "--epochs", epochs,
            "--batch-size", "4", "--clip-len", "1024", "--seed", seed, "--out", p(out),
        ])
        .assert()
        .success();
}

#[test]
fn train_writes_checkpoints_and_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), "3", "4", "1024");
    let run = tmp.path().join("run");
    let out = bin()
        .args([
            "train", "--arch", "inception_mini", "--manifest", p(&manifest), "--test-folds", "2", "--epochs", "2",
            "--batch-size", "4", "--clip-len", "1024", "--out", p(&run), "--checkpoint-every", "1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let echo: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().next().unwrap()).unwrap();
    assert_eq!(echo["command"], "train");
    assert_eq!(echo["config"]["train"]["lambda"], 1e-4);
    for f in ["best.ckpt", "last.ckpt", "epoch_0001.ckpt", "epoch_0002.ckpt", "summary.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    let epochs: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(epochs.len(), 2);
    assert_eq!(epochs[0]["steps"], 2);
    assert!(epochs[0]["test_acc"].is_number());
}

#[test]
fn same_seed_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), "2", "4", "1024");
    train_mini(&manifest, &tmp.path().join("a"), "7", "2");
    train_mini(&manifest, &tmp.path().join("b"), "7", "2");
    train_mini(&manifest, &tmp.path().join("c"), "8", "2");
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("last.ckpt")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn non_finite_training_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), "2", "2", "1024");
    let out = bin()
        .args([
            "train", "--arch", "inception_mini", "--manifest", p(&manifest), "--epochs", "5", "--batch-size", "1",
            "--clip-len", "1024", "--lr", "1e38", "--out", p(&tmp.path().join("run")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

fn untrained_checkpoint(dir: &Path) -> PathBuf {
    let model = build(ModelConfig::new(Arch::Inception, 10), 1).unwrap();
    let path = dir.join("untrained.ckpt");
    save_checkpoint(&path, &model, None, &TrainingMeta::default()).unwrap();
    path
}

#[test]
fn predict_accepts_shorter_clips() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = untrained_checkpoint(tmp.path());
    let wav = tmp.path().join("two_seconds.wav");
    let clip: Vec<f32> = (0..16_000).map(|i| (i as f32 * 0.05).sin() * 0.5).collect();
    std::fs::write(&wav, write_wav_pcm16(&clip, 8000)).unwrap();
    let a = stdout_json(&["predict", "--checkpoint", p(&ck), "--wav", p(&wav)]);
    let probs: Vec<f64> = a["probs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(probs.len(), 10);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    assert_eq!(a["input_len"], 16_000);
    assert_eq!(a["top"].as_array().unwrap().len(), 3);
    let b = stdout_json(&["predict", "--checkpoint", p(&ck), "--wav", p(&wav)]);
    assert_eq!(a, b);

    let bad = tmp.path().join("bad.wav");
    let mut bytes = write_wav_pcm16(&clip, 8000);
    bytes.truncate(1000);
    std::fs::write(&bad, bytes).unwrap();
    let out = bin().args(["predict", "--checkpoint", p(&ck), "--wav", p(&bad)]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));
}

#[test]
fn filters_export_first_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = untrained_checkpoint(tmp.path());
    let csv_path = tmp.path().join("filters.csv");
    bin().args(["export-filters", "--checkpoint", p(&ck), "--out", p(&csv_path)]).assert().success();
    let mut r = csv::Reader::from_path(&csv_path).unwrap();
    let rows: Vec<Vec<f32>> =
        r.records().map(|rec| rec.unwrap().iter().skip(1).map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 32);
    assert!(rows.iter().all(|r| r.len() == 80));
    let model = inception_core::model::load_checkpoint(&ck).unwrap().model;
    let w = &model.params().by_name("conv1d1.weight").unwrap().value;
    assert_eq!(rows.concat(), w.data());

    let nucleus = tmp.path().join("n.csv");
    bin().args(["export-filters", "--checkpoint", p(&ck), "--layer", "conv2d4", "--out", p(&nucleus)]).assert().success();
    assert_eq!(csv::Reader::from_path(&nucleus).unwrap().records().count(), 128);
}

fn read_tsv(path: &Path) -> Vec<(String, usize, Vec<f64>)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split('\t');
            let id = f.next().unwrap().to_string();
            let label = f.next().unwrap().parse().unwrap();
            (id, label, f.map(|v| v.parse().unwrap()).collect())
        })
        .collect()
}

#[test]
fn trained_embeddings_separate_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), "2", "6", "1024");
    let run = tmp.path().join("run");
    train_mini(&manifest, &run, "1", "60");
    let tsv = tmp.path().join("emb.tsv");
    bin()
        .args(["export-embeddings", "--checkpoint", p(&run.join("last.ckpt")), "--manifest", p(&manifest), "--clip-len", "1024", "--out", p(&tsv)])
        .assert()
        .success();
    let rows = read_tsv(&tsv);
    assert_eq!(rows.len(), 12);
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let (mut within, mut between) = (Vec::new(), Vec::new());
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d = dist(&rows[i].2, &rows[j].2);
            if rows[i].1 == rows[j].1 { within.push(d) } else { between.push(d) }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&between) > mean(&within), "between {} within {}", mean(&between), mean(&within));
}
