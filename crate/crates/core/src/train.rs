//! Mini-batch training with Adam and L2, plus evaluation metrics.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Sample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{softmax_xent, Mode};
use crate::optim::{add_l2_grad, AdamConfig, AdamState, RegConfig};
use crate::tensor::{argmax, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub lambda: f64,
    /// Stop after this many epochs without the train loss improving on its
    /// best by more than `min_delta`; `None` disables the rule.
    pub patience: Option<usize>,
    pub min_delta: f64,
    /// Samples per forward/backward pass inside a batch. Gradients of the
    /// pieces are summed, so without batch norm any value gives the same
    /// step; with batch norm each piece is normalized on its own. `None`
    /// means 1 without batch norm and the whole batch with it.
    pub micro_batch: Option<usize>,
    /// Epoch interval for periodic checkpoints; `None` keeps only best/last.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 300,
            seed: 0,
            adam: AdamConfig::default(),
            lambda: 1e-4,
            patience: Some(20),
            min_delta: 1e-4,
            micro_batch: None,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Config { layer: "train".into(), reason });
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.micro_batch == Some(0) {
            return bad("micro_batch must be >= 1".into());
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.adam.lr.is_nan() || self.adam.lr < 0.0 {
            return bad(format!("learning rate must be non-negative, got {}", self.adam.lr));
        }
        Ok(())
    }

    fn resolved_micro_batch(&self, batch_norm: bool) -> usize {
        self.micro_batch.unwrap_or(if batch_norm { self.batch_size } else { 1 }).min(self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    /// Batch-size weighted mean of the step losses, each being mean
    /// cross-entropy plus the L2 penalty at that step.
    pub train_loss: f64,
    /// From the train-mode forward passes made during the epoch.
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub test_loss: Option<f64>,
    pub steps: usize,
    pub step_losses: Vec<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub reports: Vec<EpochReport>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn losses(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.train_loss).collect()
    }
}

/// Stacks `1 x L` waveforms into `n x 1 x L`.
pub fn stack(samples: &[&Sample]) -> Result<Tensor<f32>> {
    let len = samples[0].waveform.len();
    let mut data = Vec::with_capacity(samples.len() * len);
    for s in samples {
        if s.waveform.len() != len {
            return Err(Error::Data(format!(
                "sample '{}' has {} samples, batch expects {len}",
                s.source_id,
                s.waveform.len()
            )));
        }
        data.extend_from_slice(s.waveform.data());
    }
    Tensor::from_vec(&[samples.len(), 1, len], data)
}

fn check_labels(set: &[Sample], classes: usize) -> Result<()> {
    match set.iter().find(|s| s.label >= classes) {
        Some(s) => Err(Error::Data(format!("sample '{}' has label {} but the model has {classes} classes", s.source_id, s.label))),
        None => Ok(()),
    }
}

fn finite_or(t: &Tensor<f32>, name: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { tensor: name.to_string() })
    }
}

/// Runs epochs until `max_epochs` or the patience rule. After each epoch
/// `observer` sees the report and the current model and optimizer state.
pub fn train(
    model: &mut Model<f32>,
    optimizer: &mut AdamState<f32>,
    train_set: &[Sample],
    test_set: Option<&[Sample]>,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochReport, &Model<f32>, &AdamState<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let classes = model.num_classes();
    check_labels(train_set, classes)?;
    if let Some(t) = test_set {
        check_labels(t, classes)?;
    }
    let reg = RegConfig::with_lambda(cfg.lambda);
    let micro = cfg.resolved_micro_batch(model.config().has_batch_norm());
    let n_params = model.params().len();
    let mut acc: Vec<Tensor<f32>> = (0..n_params).map(|i| Tensor::zeros(model.params().get(i).value.shape())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut reports = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut step_losses = Vec::new();
        let mut weighted = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            for a in &mut acc {
                a.fill(0.0);
            }
            let scale = 1.0 / batch.len() as f32;
            let mut xent = 0.0f64;
            for piece in batch.chunks(micro) {
                let samples: Vec<&Sample> = piece.iter().map(|&i| &train_set[i]).collect();
                let x = stack(&samples)?;
                let fwd = model.forward(&x, Mode::Train)?;
                finite_or(&fwd.logits, "logits")?;
                let mut g = Vec::with_capacity(fwd.logits.len());
                for (row, s) in fwd.logits.data().chunks(classes).zip(&samples) {
                    let (loss, grad) = softmax_xent(row, s.label)?;
                    xent += loss as f64;
                    if argmax(row) == s.label {
                        correct += 1;
                    }
                    g.extend(grad.into_iter().map(|v| v * scale));
                }
                if !xent.is_finite() {
                    return Err(Error::NonFinite { tensor: "loss".into() });
                }
                model.backward(&fwd.tape, &Tensor::from_vec(fwd.logits.shape(), g)?)?;
                model.commit_running_stats(&fwd.tape)?;
                for (i, a) in acc.iter_mut().enumerate() {
                    if model.params().get(i).trainable() {
                        a.add_assign(&model.params().get(i).grad)?;
                    }
                }
            }
            for (i, a) in acc.iter().enumerate() {
                if model.params().get(i).trainable() {
                    model.params_mut().get_mut(i).grad.data_mut().copy_from_slice(a.data());
                }
            }
            let penalty = add_l2_grad(model.params_mut(), &reg)?;
            for i in 0..n_params {
                let p = model.params().get(i);
                if p.trainable() {
                    finite_or(&p.grad, &format!("{}.grad", model.params().name(i)))?;
                }
            }
            optimizer.step(model.params_mut())?;
            for i in 0..n_params {
                finite_or(&model.params().get(i).value, model.params().name(i))?;
            }
            let step_loss = xent / batch.len() as f64 + penalty;
            weighted += step_loss * batch.len() as f64;
            step_losses.push(step_loss);
        }
        let train_loss = weighted / train_set.len() as f64;
        let (test_acc, test_loss) = match test_set {
            Some(t) if !t.is_empty() => {
                let e = evaluate(model, t)?;
                (Some(e.accuracy), Some(e.mean_loss))
            }
            _ => (None, None),
        };
        let report = EpochReport {
            epoch,
            train_loss,
            train_acc: correct as f64 / train_set.len() as f64,
            test_acc,
            test_loss,
            steps: step_losses.len(),
            step_losses,
            wall_time_s: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {train_loss:.5} acc {:.3}{}",
            report.train_acc,
            test_acc.map(|a| format!(" test {a:.3}")).unwrap_or_default()
        );
        observer(&report, model, optimizer)?;
        reports.push(report);
        if train_loss < best - cfg.min_delta {
            best = train_loss;
            stale = 0;
        } else {
            stale += 1;
        }
        if cfg.patience.is_some_and(|p| stale >= p) {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome { reports, stopped_early })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Mean cross-entropy, without the L2 penalty.
    pub mean_loss: f64,
    pub count: usize,
}

/// Inference-mode accuracy, confusion matrix and mean loss. Predictions are
/// the arg-max class, ties going to the lowest index.
pub fn evaluate(model: &Model<f32>, set: &[Sample]) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let k = model.num_classes();
    check_labels(set, k)?;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut loss = 0.0;
    for s in set {
        let fwd = model.forward(&stack(&[s])?, Mode::Infer)?;
        let row = fwd.logits.data();
        loss += softmax_xent(row, s.label)?.0 as f64;
        confusion[s.label][argmax(row)] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / set.len() as f64,
        confusion,
        mean_loss: loss / set.len() as f64,
        count: set.len(),
    })
}
