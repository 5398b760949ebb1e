use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{augment, batch, child_rng, parse_ratio, plane_to_gray, split, AugmentConfig, Sample};
use super::optim::{cosine_lr, Adam};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Model};
use crate::objective::{combined_loss, LossConfig, MetricAccumulator, MetricReport};
use crate::tensor::{DType, Graph, Mode, Scalar, Tensor};

pub const TRAIN_CSV_HEADER: &str = "epoch,split,iou,f1,accuracy,auc,precision,recall,loss,lr";

// generator streams derived from the run seed
const STREAM_SHUFFLE: u64 = 1 << 32;
const STREAM_AUGMENT: u64 = 2 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub batch_size: usize,
    /// Train:validation ratio such as `"4:1"`.
    pub split: String,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub threshold: f64,
    pub loss: LossConfig,
    /// Also score the (unaugmented) training split after every epoch.
    pub eval_train: bool,
    /// Where `metrics.csv`, `best.ckpt` and `final.ckpt` go.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            base_lr: 1e-4,
            min_lr: 1e-5,
            batch_size: 4,
            split: "4:1".into(),
            augment: AugmentConfig::default(),
            seed: 0,
            threshold: 0.5,
            loss: LossConfig::default(),
            eval_train: true,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        parse_ratio(&self.split)?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.base_lr && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 <= min_lr <= base_lr, got {} and {}",
                self.min_lr, self.base_lr
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        self.loss.validate()
    }

    /// Learning rate used throughout `epoch`, annealed so the last epoch runs
    /// at `min_lr`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        cosine_lr(epoch, self.epochs.saturating_sub(1), self.base_lr, self.min_lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean minibatch loss of the epoch, per sample.
    pub train_loss: f64,
    pub train: Option<(MetricReport, f64)>,
    pub val: Option<(MetricReport, f64)>,
}

impl EpochLog {
    /// CSV rows under [`TRAIN_CSV_HEADER`]: `train` (with the minibatch loss)
    /// then `val`, each when present.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        if let Some((r, _)) = &self.train {
            rows.push(format!("{},{},{}", r.csv_row(self.epoch, "train"), self.train_loss, self.lr));
        }
        if let Some((r, loss)) = &self.val {
            rows.push(format!("{},{loss},{}", r.csv_row(self.epoch, "val"), self.lr));
        }
        rows
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub history: Vec<EpochLog>,
    /// Epoch with the highest validation IoU (training IoU without a
    /// validation split).
    pub best_epoch: Option<usize>,
    pub best_iou: f64,
    pub train_size: usize,
    pub val_size: usize,
}

impl TrainSummary {
    pub fn last(&self) -> &EpochLog {
        self.history.last().expect("at least one epoch")
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.train_loss).collect()
    }
}

/// Eval-mode metrics and mean loss over `data`.
pub fn evaluate<T: Scalar>(
    model: &mut Model<T>,
    data: &[Sample],
    batch_size: usize,
    loss: &LossConfig,
    threshold: f64,
) -> Result<(MetricReport, f64)> {
    let mut acc = MetricAccumulator::new();
    let mut total = 0.0;
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, z) = batch::<T>(&refs)?;
        let g = Graph::no_grad();
        let logits = model.forward(&g, Mode::Eval, g.constant(x))?;
        let zv = g.constant(z.clone());
        total += combined_loss(loss, logits, zv)?.value().item().f64() * chunk.len() as f64;
        acc.add_batch(&logits.sigmoid().value(), &z, threshold)?;
    }
    Ok((acc.report(), total / data.len().max(1) as f64))
}

/// Evaluate a checkpoint at its stored precision.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    data: &[Sample],
    batch_size: usize,
    threshold: f64,
) -> Result<MetricReport> {
    let loss = LossConfig::default();
    Ok(match ck.manifest.dtype {
        DType::F32 => evaluate(&mut ck.into_model::<f32>()?, data, batch_size, &loss, threshold)?.0,
        DType::F64 => evaluate(&mut ck.into_model::<f64>()?, data, batch_size, &loss, threshold)?.0,
    })
}

/// Write `<id>.png` masks (0/255) of the thresholded predictions under `dir`.
pub fn write_predictions<T: Scalar>(
    model: &mut Model<T>,
    data: &[Sample],
    dir: &Path,
    batch_size: usize,
    threshold: f64,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = batch::<T>(&refs)?;
        let logits = model.predict(&x)?;
        let cut = logit(threshold);
        for (i, s) in chunk.iter().enumerate() {
            let (h, w) = (s.height(), s.width());
            let bin: Vec<f64> =
                logits.batch_item(i).data().iter().map(|&l| if l.f64() >= cut { 1.0 } else { 0.0 }).collect();
            let path = dir.join(format!("{}.png", s.id));
            plane_to_gray(&bin, h, w)
                .save(&path)
                .map_err(|e| Error::Format { path: path.display().to_string(), msg: e.to_string() })?;
            out.push(path);
        }
    }
    Ok(out)
}

/// Probability threshold moved to logit space, so `sigmoid(l) >= p` iff
/// `l >= logit(p)`.
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Split `data` by the configured ratio and train.
pub fn train<T: Scalar>(model: &mut Model<T>, cfg: &TrainConfig, data: &[Sample]) -> Result<TrainSummary> {
    let (tr, va) = split(data, parse_ratio(&cfg.split)?, cfg.seed);
    train_on(model, cfg, &tr, &va, &mut |_| {})
}

/// Train on `train_set`, scoring `val_set` after every epoch. `on_epoch` sees
/// each finished epoch.
pub fn train_on<T: Scalar>(
    model: &mut Model<T>,
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainSummary> {
    cfg.validate()?;
    if train_set.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "training split holds {} samples, fewer than the batch size {}",
            train_set.len(),
            cfg.batch_size
        )));
    }
    let mut csv = match &cfg.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let cfg_json = serde_json::json!({ "model": model.cfg, "train": cfg });
            fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg_json)?)?;
            let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
            writeln!(w, "{TRAIN_CSV_HEADER}")?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let mut opt = Adam::new(&model.store);
    let mut summary = TrainSummary {
        history: Vec::new(),
        best_epoch: None,
        best_iou: f64::NEG_INFINITY,
        train_size: train_set.len(),
        val_size: val_set.len(),
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut child_rng(cfg.seed, STREAM_SHUFFLE + epoch as u64));
        let mut aug_rng = child_rng(cfg.seed, STREAM_AUGMENT + epoch as u64);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<Sample> = idx
                .iter()
                .map(|&i| {
                    if cfg.augment.any() {
                        augment(&train_set[i], &mut aug_rng, &cfg.augment)
                    } else {
                        train_set[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&Sample> = samples.iter().collect();
            let (x, z) = batch::<T>(&refs)?;
            model.store.zero_grad();
            let g = Graph::new();
            let logits = model.forward(&g, Mode::Train, g.constant(x))?;
            let loss = combined_loss(&cfg.loss, logits, g.constant(z))?;
            let lv = loss.value().item().f64();
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += lv * idx.len() as f64;
            let grads = g.backward(loss)?;
            model.store.accumulate(&grads);
            opt.step(&mut model.store, lr)?;
        }
        let train_eval = if cfg.eval_train {
            Some(evaluate(model, train_set, cfg.batch_size, &cfg.loss, cfg.threshold)?)
        } else {
            None
        };
        let val_eval = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(model, val_set, cfg.batch_size, &cfg.loss, cfg.threshold)?)
        };
        let log =
            EpochLog { epoch, lr, train_loss: loss_sum / train_set.len() as f64, train: train_eval, val: val_eval };

        if let Some(w) = csv.as_mut() {
            for row in log.csv_rows() {
                writeln!(w, "{row}")?;
            }
            w.flush()?;
        }
        let score = log.val.or(log.train).map(|(r, _)| r.iou);
        if let Some(iou) = score {
            if iou > summary.best_iou {
                summary.best_iou = iou;
                summary.best_epoch = Some(epoch);
                if let Some(dir) = &cfg.out_dir {
                    Checkpoint::of(model, serde_json::json!({ "epoch": epoch, "iou": iou }))
                        .save(&dir.join("best.ckpt"))?;
                }
            }
        }
        on_epoch(&log);
        summary.history.push(log);
    }
    if let Some(dir) = &cfg.out_dir {
        Checkpoint::of(model, serde_json::json!({ "epoch": cfg.epochs - 1 })).save(&dir.join("final.ckpt"))?;
    }
    Ok(summary)
}

/// Means of consecutive non-overlapping windows of `len` values; a trailing
/// partial window is dropped.
pub fn window_means(values: &[f64], len: usize) -> Vec<f64> {
    values.chunks_exact(len.max(1)).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect()
}

/// Probabilities of `model` on one `[N, 3, H, W]` batch.
pub fn predict_probs<T: Scalar>(model: &mut Model<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(model.predict(x)?.map(|l| T::of(1.0 / (1.0 + (-l.f64()).exp()))))
}
