use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use inception_core::analysis::{export_filters as filters, write_embeddings};
use inception_core::audio::synth::{class_name, synth_clip};
use inception_core::audio::{
    decode_wav, load_samples, make_splits, prepare, resample, write_wav_pcm16, ColumnMap, Manifest, ManifestRow, TARGET_RATE,
};
use inception_core::model::{build, load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, TrainingMeta};
use inception_core::optim::{AdamConfig, AdamState};
use inception_core::train::{evaluate, train as run_training, EpochReport, TrainConfig};
use inception_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::{CountArgs, EvalArgs, ExportEmbeddingsArgs, ExportFiltersArgs, PredictArgs, SynthArgs, TrainArgs};

/// Resolved configuration, printed to stderr before any work.
fn echo(command: &str, config: &impl Serialize) {
    let v = json!({ "command": command, "config": config });
    eprintln!("{v}");
}

fn data_dir(explicit: &Option<PathBuf>, manifest: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    if !path.is_file() {
        return Err(Error::Data(format!("manifest {} does not exist", path.display())));
    }
    Manifest::load(path, &ColumnMap::default())
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::Data(format!("checkpoint {} does not exist", path.display())));
    }
    load_checkpoint(path)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, v)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ResolvedTrain<'a> {
    arch: String,
    manifest: &'a Path,
    data_dir: PathBuf,
    test_folds: &'a [u32],
    clip_len: usize,
    num_classes: usize,
    class_names: &'a [String],
    out: &'a Path,
    train: &'a TrainConfig,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let cfg = TrainConfig {
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        seed: a.seed,
        adam: AdamConfig { lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps },
        lambda: a.lambda,
        patience: (a.patience > 0).then_some(a.patience),
        min_delta: a.min_delta,
        micro_batch: a.micro_batch,
        checkpoint_every: a.checkpoint_every,
    };
    cfg.validate()?;
    let dir = data_dir(&a.data_dir, &a.manifest);
    echo(
        "train",
        &ResolvedTrain {
            arch: a.arch.to_string(),
            manifest: &a.manifest,
            data_dir: dir.clone(),
            test_folds: &a.test_folds,
            clip_len: a.clip_len,
            num_classes: manifest.num_classes(),
            class_names: &manifest.class_names,
            out: &a.out,
            train: &cfg,
        },
    );

    let folds: BTreeSet<u32> = a.test_folds.iter().copied().collect();
    let (train_rows, test_rows) = make_splits(&manifest.rows, |r| r.fold, &folds, a.seed);
    if train_rows.is_empty() {
        return Err(Error::Data("no training rows remain after holding out the test folds".into()));
    }
    let train_set = load_samples(&dir, &train_rows, a.clip_len)?;
    let test_set = load_samples(&dir, &test_rows, a.clip_len)?;
    eprintln!("loaded {} training and {} test clips", train_set.len(), test_set.len());

    let mut model = build(ModelConfig::new(a.arch, manifest.num_classes()), a.seed)?;
    let mut opt = AdamState::new(model.params(), cfg.adam);
    fs::create_dir_all(&a.out)?;
    let mut log = BufWriter::new(File::create(a.out.join("train_log.jsonl"))?);
    let mut losses = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let meta = |epoch: usize, losses: &[f64]| TrainingMeta {
        epoch,
        seed: a.seed,
        loss_history_sha256: TrainingMeta::digest(losses),
        adam: cfg.adam,
        lambda: cfg.lambda,
        class_names: manifest.class_names.clone(),
    };

    let test = (!test_set.is_empty()).then_some(test_set.as_slice());
    let outcome = run_training(&mut model, &mut opt, &train_set, test, &cfg, |r: &EpochReport, m, o| {
        serde_json::to_writer(&mut log, r)?;
        writeln!(log)?;
        log.flush()?;
        losses.push(r.train_loss);
        let meta = meta(r.epoch, &losses);
        save_checkpoint(a.out.join("last.ckpt"), m, Some(o), &meta)?;
        if best.is_none_or(|(_, l)| r.train_loss < l) {
            best = Some((r.epoch, r.train_loss));
            save_checkpoint(a.out.join("best.ckpt"), m, Some(o), &meta)?;
        }
        if cfg.checkpoint_every.is_some_and(|k| k > 0 && r.epoch.is_multiple_of(k)) {
            save_checkpoint(a.out.join(format!("epoch_{:04}.ckpt", r.epoch)), m, Some(o), &meta)?;
        }
        eprintln!(
            "epoch {:>4}  loss {:.5}  train acc {:.3}{}  {:.1}s",
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.test_acc.map(|t| format!("  test acc {t:.3}")).unwrap_or_default(),
            r.wall_time_s
        );
        Ok(())
    })?;

    let test_eval = match test {
        Some(t) => Some(evaluate(&model, t)?),
        None => None,
    };
    let last = outcome.reports.last().expect("at least one epoch");
    let (best_epoch, best_loss) = best.expect("at least one epoch");
    let summary = json!({
        "arch": a.arch.to_string(),
        "epochs_run": outcome.reports.len(),
        "stopped_early": outcome.stopped_early,
        "best_epoch": best_epoch,
        "best_train_loss": best_loss,
        "final_train_loss": last.train_loss,
        "final_train_acc": last.train_acc,
        "train_samples": train_set.len(),
        "test_samples": test_rows.len(),
        "test": test_eval,
        "class_names": manifest.class_names,
        "loss_history_sha256": TrainingMeta::digest(&outcome.losses()),
    });
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    echo("eval", &a);
    let ck = load_model(&a.checkpoint)?;
    let manifest = load_manifest(&a.manifest)?;
    let rows: Vec<ManifestRow> = if a.test_folds.is_empty() {
        manifest.rows.clone()
    } else {
        manifest.rows.iter().filter(|r| r.fold.is_some_and(|f| a.test_folds.contains(&f))).cloned().collect()
    };
    let samples = load_samples(&data_dir(&a.data_dir, &a.manifest), &rows, a.clip_len)?;
    let e = evaluate(&ck.model, &samples)?;
    println!("{}", serde_json::to_string_pretty(&json!({ "evaluation": e, "class_names": ck.meta.class_names }))?);
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    echo("predict", &a);
    let ck = load_model(&a.checkpoint)?;
    let bytes = fs::read(&a.wav).map_err(|e| Error::Data(format!("cannot read {}: {e}", a.wav.display())))?;
    let (samples, rate) = decode_wav(&bytes)?;
    let x = resample(&samples, rate, TARGET_RATE)?;
    let len = a.clip_len.unwrap_or(x.len());
    let input = prepare(&x, len)?;
    let probs = ck.model.predict(&input)?;
    let p = probs.data();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&i, &j| p[j].total_cmp(&p[i]).then(i.cmp(&j)));
    let name = |i: usize| ck.meta.class_names.get(i).cloned().unwrap_or_else(|| format!("class{i}"));
    let top: Vec<_> =
        order.iter().take(a.top_k.max(1)).map(|&i| json!({ "class": i, "name": name(i), "prob": p[i] })).collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "wav": a.wav,
            "input_len": len,
            "top": top,
            "probs": p,
        }))?
    );
    Ok(())
}

pub fn count_params(a: CountArgs) -> Result<()> {
    echo("count-params", &a);
    let model = build(ModelConfig::new(a.arch, a.num_classes), 0)?;
    let trainable = model.count_params(false);
    let total = model.count_params(true);
    let mut out = json!({
        "arch": a.arch.to_string(),
        "num_classes": a.num_classes,
        "trainable": trainable,
        "total": total,
        "count": if a.include_non_trainable { total } else { trainable },
    });
    if let Some(expected) = model.config().expected_param_count {
        if (total as f64 / 1000.0).round() as u64 != expected / 1000 {
            out["note"] = json!(format!(
                "the layer listing yields {total} parameters; the quoted total for this variant is {}K",
                expected / 1000
            ));
        }
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

pub fn export_filters(a: ExportFiltersArgs) -> Result<()> {
    echo("export-filters", &a);
    let ck = load_model(&a.checkpoint)?;
    let table = filters(&ck.model, a.layer.as_deref())?;
    table.write_csv(BufWriter::new(File::create(&a.out)?))?;
    eprintln!("wrote {} filters of {} to {}", table.rows.len(), table.layer, a.out.display());
    Ok(())
}

pub fn export_embeddings(a: ExportEmbeddingsArgs) -> Result<()> {
    echo("export-embeddings", &a);
    let ck = load_model(&a.checkpoint)?;
    let manifest = load_manifest(&a.manifest)?;
    let samples = load_samples(&data_dir(&a.data_dir, &a.manifest), &manifest.rows, a.clip_len)?;
    let mut out = BufWriter::new(File::create(&a.out)?);
    let n = write_embeddings(&ck.model, &samples, &mut out)?;
    out.flush()?;
    eprintln!("wrote {n} embeddings to {}", a.out.display());
    Ok(())
}

pub fn synth_data(a: SynthArgs) -> Result<()> {
    echo("synth-data", &a);
    if a.classes == 0 || a.folds == 0 || a.clip_len == 0 {
        return Err(Error::Data("classes, folds and clip length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    fs::create_dir_all(&a.out)?;
    let mut w = csv::Writer::from_path(a.out.join("manifest.csv"))?;
    w.write_record(["slice_file_name", "fsID", "start", "end", "salience", "fold", "classID", "class"])?;
    let seconds = a.clip_len as f64 / TARGET_RATE as f64;
    for c in 0..a.classes {
        if c >= inception_core::audio::synth::MAX_CLASSES {
            return Err(Error::Data(format!("at most {} synthetic classes", inception_core::audio::synth::MAX_CLASSES)));
        }
        for i in 0..a.per_class {
            let clip = synth_clip(c, a.clip_len, &mut rng);
            let clip = resample(&clip, TARGET_RATE, a.rate)?;
            let fold = (i as u32 % a.folds) + 1;
            let file = format!("{}-{c}-0-{i}.wav", 1000 + c);
            let dir = a.out.join(format!("fold{fold}"));
            fs::create_dir_all(&dir)?;
            fs::write(dir.join(&file), write_wav_pcm16(&clip, a.rate))?;
            w.write_record([
                file,
                (1000 + c).to_string(),
                "0".into(),
                format!("{seconds}"),
                "1".into(),
                fold.to_string(),
                c.to_string(),
                class_name(c),
            ])?;
        }
    }
    w.flush()?;
    eprintln!("wrote {} clips to {}", a.classes * a.per_class, a.out.display());
    Ok(())
}
