use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::{Monitor, TrainConfig};
use super::optim::Optimizer;
use super::scheduler::PlateauScheduler;
use crate::data::{augment, label_matrix, LabeledSample};
use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::metrics::{binary_accuracy, evaluate};
use crate::models::{save_checkpoint, Model};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Macro AUC on the validation split, when any class is non-degenerate.
    pub val_auc: Option<f64>,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept as the best checkpoint.
    pub best_epoch: Option<usize>,
    pub steps: usize,
}

pub const REPORT_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,lr,seconds";

impl TrainReport {
    /// CSV with [`REPORT_HEADER`]; `seconds` is written as 0 unless
    /// `wall_clock`, keeping reports of identical runs byte-identical.
    pub fn to_csv(&self, wall_clock: bool) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.records {
            let secs = if wall_clock { r.seconds } else { 0.0 };
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr, secs
            )
            .expect("writing to a String");
        }
        out
    }
}

/// Predictions and loss of `model` over `samples` in eval mode.
pub struct Evaluation {
    pub probs: Vec<Vec<f64>>,
    pub loss: f64,
}

/// Runs `model` in eval mode over `samples` without augmentation, averaging
/// the head-matched loss over all cells.
pub fn evaluate_samples(model: &mut Model, samples: &[LabeledSample], batch: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let mut probs = Vec::with_capacity(samples.len());
    let mut loss_sum = 0.0;
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&LabeledSample> = chunk.iter().collect();
        let x = Tensor::stack(&chunk.iter().map(|s| &s.pixels).collect::<Vec<_>>())?;
        let y = label_matrix(&refs)?;
        let mut pass = model.forward(x, false, None)?;
        let loss = pass.loss(&y)?;
        loss_sum += pass.cx.graph.value(loss).data()[0] * chunk.len() as f64;
        let p = pass.probabilities();
        let k = p.shape()[1];
        probs.extend(p.data().chunks(k).map(<[f64]>::to_vec));
    }
    Ok(Evaluation {
        probs,
        loss: loss_sum / samples.len() as f64,
    })
}

fn augment_batch(
    samples: &[LabeledSample],
    indices: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    pool: &rayon::ThreadPool,
) -> Result<Tensor> {
    let images: Vec<Tensor> = pool.install(|| {
        indices
            .par_iter()
            .map(|&i| {
                // One stream per (epoch, sample): independent of batch order
                // and worker count.
                let mut r = rng::substream(cfg.seed, &format!("{}/{epoch}/{i}", rng::AUGMENT));
                augment(&samples[i].pixels, &cfg.augmentation, &mut r)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Tensor::stack(&images.iter().collect::<Vec<_>>())
}

fn checkpoint_path(dir: Option<&Path>, name: &str) -> Option<PathBuf> {
    dir.map(|d| d.join(name))
}

/// Trains `model` on `train`, validating on `val` after every epoch.
///
/// The scheduler and best-checkpoint selection follow `cfg.monitor`. When
/// `out_dir` is given the best parameters are written to `best.ckpt` there.
/// On return `model` holds the best parameters seen.
pub fn fit(
    model: &mut Model,
    train: &[LabeledSample],
    val: &[LabeledSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    fit_with_progress(model, train, val, cfg, out_dir, &mut |_| {})
}

/// [`fit`], calling `on_epoch` after each epoch's record is complete.
pub fn fit_with_progress(
    model: &mut Model,
    train: &[LabeledSample],
    val: &[LabeledSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "training needs non-empty splits (train {}, val {})",
            train.len(),
            val.len()
        )));
    }
    if model.spec.family != cfg.spec.family {
        return Err(Error::Config(format!(
            "model family {} does not match configured family {}",
            model.spec.family, cfg.spec.family
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut optimizer = Optimizer::new(cfg.optimizer.clone())?;
    let mut scheduler = PlateauScheduler::new(cfg.plateau.clone(), cfg.optimizer.lr)?;
    let mut report = TrainReport::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut last_good = model.params.clone();
    let best_path = checkpoint_path(out_dir, "best.ckpt");

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let lr = optimizer.lr();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::indexed(cfg.seed, rng::DATA, epoch as u64));
        let (mut loss_sum, mut hits) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let x = augment_batch(train, batch, cfg, epoch, &pool)?;
            let refs: Vec<&LabeledSample> = batch.iter().map(|&i| &train[i]).collect();
            let y = label_matrix(&refs)?;
            let mut drop_rng = rng::indexed(cfg.seed, rng::DROPOUT, report.steps as u64);
            let mut pass = model.forward(x, true, Some(&mut drop_rng))?;
            let loss = pass.loss(&y)?;
            let value = pass.cx.graph.value(loss).data()[0];
            if !value.is_finite() {
                drop(pass);
                let last_good_path = checkpoint_path(out_dir, "last_good.ckpt");
                if let Some(path) = &last_good_path {
                    let mut snapshot = model.clone();
                    snapshot.params = last_good;
                    save_checkpoint(&snapshot, path)?;
                }
                return Err(Error::Divergence {
                    epoch,
                    step: report.steps,
                    loss: value,
                    last_good: last_good_path,
                });
            }
            pass.cx.backward(loss)?;
            let probs = pass.probabilities();
            drop(pass);
            optimizer.step(&mut model.params)?;
            model.params.zero_grad();
            report.steps += 1;
            let rows: Vec<Vec<f64>> = probs.data().chunks(probs.shape()[1]).map(<[f64]>::to_vec).collect();
            let targets: Vec<Vec<f64>> = refs.iter().map(|s| s.labels.clone()).collect();
            loss_sum += value * batch.len() as f64;
            hits += binary_accuracy(&rows, &targets, 0.5)? * batch.len() as f64;
        }
        last_good = model.params.clone();

        let eval = evaluate_samples(model, val, cfg.batch_size)?;
        let targets: Vec<Vec<f64>> = val.iter().map(|s| s.labels.clone()).collect();
        let val_report = evaluate(&eval.probs, &targets)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hits / train.len() as f64,
            val_loss: eval.loss,
            val_acc: val_report.accuracy,
            val_auc: val_report.macro_auc,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        let metric = match cfg.monitor {
            Monitor::ValLoss => Some(record.val_loss),
            Monitor::ValAuc => record.val_auc,
        };
        on_epoch(&record);
        report.records.push(record);
        let Some(metric) = metric.filter(|m| m.is_finite()) else {
            continue;
        };
        let improved = match &best {
            None => true,
            Some((b, _)) => match cfg.monitor {
                Monitor::ValLoss => metric < *b,
                Monitor::ValAuc => metric > *b,
            },
        };
        if improved {
            best = Some((metric, model.params.clone()));
            report.best_epoch = Some(epoch);
            if let Some(path) = &best_path {
                save_checkpoint(model, path)?;
            }
        }
        optimizer.set_lr(scheduler.step(metric)?);
    }

    match best {
        Some((_, params)) => model.params = params,
        None => {
            // No epoch produced a usable metric; keep the final parameters.
            if let Some(path) = &best_path {
                save_checkpoint(model, path)?;
            }
        }
    }
    Ok(report)
}
