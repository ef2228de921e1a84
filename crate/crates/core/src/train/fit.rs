use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, RngState};
use super::optimizer::{Optimizer, OptimizerKind};
use crate::data::{stream_batches, AugmentConfig, Batch, DatasetManifest, Split, StreamConfig};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, GradStart, Network};
use crate::nn::{cross_entropy, ForwardCtx};
use crate::seed;
use crate::tensor::{Scalar, Tensor};

pub const CURVE_HEADER: &str = "epoch,train_acc,train_loss,val_acc,val_loss";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Momentum for `sgd_momentum`.
    pub momentum: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub prefetch: usize,
    pub curve_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            seed: 0,
            augment: AugmentConfig::default(),
            prefetch: 2,
            curve_path: None,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        self.augment.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    /// Fraction of training samples classified correctly while the epoch
    /// was running (cumulative over its batches).
    pub train_acc: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
}

impl CurvePoint {
    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.6},{:.6}", self.epoch, self.train_acc, self.train_loss, self.val_acc, self.val_loss)
    }
}

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut text = String::from(CURVE_HEADER);
    text.push('\n');
    for p in points {
        text.push_str(&p.csv_row());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

fn batch_tensors<T: Scalar>(batch: &Batch) -> (Tensor<T>, Tensor<T>) {
    (batch.images.cast(), batch.labels.cast())
}

fn count_correct<T: Scalar>(probs: &Tensor<T>, labels: &Tensor<T>) -> usize {
    argmax_rows(probs).into_iter().zip(argmax_rows(labels)).filter(|(p, t)| p == t).count()
}

/// One forward/backward/update on a batch. Batch-norm running statistics
/// are folded in after the update.
pub fn train_step<T: Scalar>(
    net: &mut Network<T>,
    opt: &mut Optimizer<T>,
    images: &Tensor<T>,
    labels: &Tensor<T>,
    ctx: &ForwardCtx,
) -> Result<StepStats> {
    let trace = net.forward_trace(images, ctx)?;
    let probs = trace.output();
    let ce = cross_entropy(probs, labels)?;
    let correct = count_correct(probs, labels);
    let count = images.batch();
    if !ce.loss.is_finite() {
        return Ok(StepStats { loss: ce.loss, correct, count });
    }
    let grads = net.backward(&trace, &ce.grad_logits, GradStart::Logits)?;
    let grad_refs: Vec<&Tensor<T>> = grads.iter().collect();
    opt.step(net.params_mut(), &grad_refs)?;
    net.update_running_stats(&trace);
    Ok(StepStats { loss: ce.loss, correct, count })
}

/// Result of an inference pass over a whole split, in item order.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPass {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub truth: Vec<usize>,
}

pub fn evaluate_split<T: Scalar>(
    net: &Network<T>,
    manifest: &DatasetManifest,
    split: Split,
    batch_size: usize,
) -> Result<EvalPass> {
    let mut cfg = StreamConfig::ordered(batch_size);
    cfg.image_size = net.input_shape()[0];
    let mut loss_sum = 0.0;
    let mut predictions = Vec::new();
    let mut truth = Vec::new();
    for batch in stream_batches(manifest, split, &cfg)? {
        let batch = batch?;
        let (x, y) = batch_tensors::<T>(&batch);
        let probs = net.forward(&x, &ForwardCtx::infer())?;
        loss_sum += cross_entropy(&probs, &y)?.loss * batch.indices.len() as f64;
        predictions.extend(argmax_rows(&probs));
        truth.extend(&batch.classes);
    }
    let n = truth.len();
    let correct = predictions.iter().zip(&truth).filter(|(p, t)| p == t).count();
    Ok(EvalPass { loss: loss_sum / n as f64, accuracy: correct as f64 / n as f64, predictions, truth })
}

/// Trains for exactly `cfg.epochs` epochs, evaluating the full validation
/// split after each one. `on_epoch` sees every curve point as soon as it
/// is computed; the CSV (if configured) is flushed at the same time.
pub fn fit<T: Scalar>(
    net: &mut Network<T>,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&CurvePoint),
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    for split in [Split::Train, Split::Val] {
        if manifest.split(split).is_empty() {
            return Err(Error::EmptyInput(format!("split {split} has no images")));
        }
    }
    let mut curve_file = match &cfg.curve_path {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "{CURVE_HEADER}").and_then(|_| w.flush()).map_err(|e| Error::io("writing curve", e))?;
            Some(w)
        }
        None => None,
    };

    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.momentum);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let stream_cfg = StreamConfig {
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            epoch,
            shuffle: true,
            augment: cfg.augment,
            prefetch: cfg.prefetch,
            image_size: net.input_shape()[0],
        };
        let (mut seen, mut correct, mut loss_sum) = (0usize, 0usize, 0.0f64);
        for (b, batch) in stream_batches(manifest, Split::Train, &stream_cfg)?.enumerate() {
            let batch = batch?;
            let (x, y) = batch_tensors::<T>(&batch);
            let ctx = ForwardCtx::train(seed::mix3(cfg.seed, epoch as u64, b as u64));
            let stats = train_step(net, &mut opt, &x, &y, &ctx)?;
            if !stats.loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss: stats.loss });
            }
            seen += stats.count;
            correct += stats.correct;
            loss_sum += stats.loss * stats.count as f64;
        }
        let val = evaluate_split(net, manifest, Split::Val, cfg.batch_size)?;
        let point = CurvePoint {
            epoch,
            train_acc: correct as f64 / seen as f64,
            train_loss: loss_sum / seen as f64,
            val_acc: val.accuracy,
            val_loss: val.loss,
        };
        if let Some(w) = &mut curve_file {
            writeln!(w, "{}", point.csv_row()).and_then(|_| w.flush()).map_err(|e| Error::io("writing curve", e))?;
        }
        on_epoch(&point);
        curve.push(point);
    }

    if let Some(path) = &cfg.checkpoint_path {
        let rng = RngState { seed: cfg.seed, epochs_completed: cfg.epochs };
        save_checkpoint(net, Some(cfg), Some(rng), path)?;
    }
    Ok(curve)
}
