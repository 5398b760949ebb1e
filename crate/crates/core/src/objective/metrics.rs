use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Number of evenly spaced thresholds on `[0, 1]` used for the ROC curve.
pub const AUC_THRESHOLDS: usize = 256;

pub const METRIC_CSV_HEADER: &str = "epoch,split,iou,f1,accuracy,auc,precision,recall";

/// Pixel confusion counts of one binarized prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn count(pred: impl IntoIterator<Item = bool>, truth: impl IntoIterator<Item = bool>) -> Self {
        let mut c = Confusion::default();
        for (p, t) in pred.into_iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// 1 when both prediction and truth are empty.
    pub fn iou(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    /// 1 when both prediction and truth are empty.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.fn_ + self.tn;
        if n == 0 {
            1.0
        } else {
            (self.tp + self.tn) as f64 / n as f64
        }
    }

    /// 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        let d = self.tp + self.fp;
        if d == 0 {
            0.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    /// 1 when the truth is empty.
    pub fn recall(&self) -> f64 {
        let d = self.tp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }
}

/// Area under the ROC curve traced by thresholds `k / 255`, `k = 0..=255`,
/// closed at `(0, 0)`, by the trapezoid rule. A pixel counts as positive at
/// threshold `t` when `p >= t`. Returns 0.5 when the truth has only one class.
pub fn roc_auc(probs: &[f64], truth: &[bool]) -> f64 {
    let bins = AUC_THRESHOLDS;
    let top = (bins - 1) as f64;
    let (mut pos, mut neg) = (vec![0u64; bins], vec![0u64; bins]);
    for (&p, &t) in probs.iter().zip(truth) {
        // p >= k/255  <=>  floor(255 p) >= k
        let b = ((p * top).floor().max(0.0) as usize).min(bins - 1);
        if t {
            pos[b] += 1;
        } else {
            neg[b] += 1;
        }
    }
    let (np, nn) = (pos.iter().sum::<u64>(), neg.iter().sum::<u64>());
    if np == 0 || nn == 0 {
        return 0.5;
    }
    // walk thresholds from high to low; counts at or above the current one
    let (mut tp, mut fp) = (0u64, 0u64);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    for k in (0..bins).rev() {
        tp += pos[k];
        fp += neg[k];
        let tpr = tp as f64 / np as f64;
        let fpr = fp as f64 / nn as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    area
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
}

impl MetricReport {
    pub fn of_image(probs: &[f64], truth: &[bool], threshold: f64) -> Self {
        let c = Confusion::count(probs.iter().map(|&p| p >= threshold), truth.iter().copied());
        MetricReport {
            iou: c.iou(),
            f1: c.f1(),
            accuracy: c.accuracy(),
            auc: roc_auc(probs, truth),
            precision: c.precision(),
            recall: c.recall(),
        }
    }

    pub fn values(&self) -> [f64; 6] {
        [self.iou, self.f1, self.accuracy, self.auc, self.precision, self.recall]
    }

    /// One row under [`METRIC_CSV_HEADER`].
    pub fn csv_row(&self, epoch: usize, split: &str) -> String {
        let v = self.values().map(|x| x.to_string());
        format!("{epoch},{split},{}", v.join(","))
    }
}

/// Running per-image mean of [`MetricReport`]s over several batches.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    sum: [f64; 6],
    images: usize,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_image(&mut self, r: &MetricReport) {
        for (s, v) in self.sum.iter_mut().zip(r.values()) {
            *s += v;
        }
        self.images += 1;
    }

    /// Add every image of a `[N, ...]` batch of probabilities and masks. Mask
    /// values at or above 0.5 are foreground.
    pub fn add_batch<T: Scalar>(&mut self, probs: &Tensor<T>, truth: &Tensor<T>, threshold: f64) -> Result<()> {
        if probs.shape() != truth.shape() || probs.rank() == 0 {
            return dim_err(format!(
                "metrics: prediction {:?} and mask {:?} differ in shape",
                probs.shape(),
                truth.shape()
            ));
        }
        let n = probs.shape()[0];
        let per = probs.len() / n.max(1);
        if per == 0 {
            return Ok(());
        }
        for (p, t) in probs.data().chunks(per).zip(truth.data().chunks(per)) {
            let p: Vec<f64> = p.iter().map(|v| v.f64()).collect();
            let t: Vec<bool> = t.iter().map(|v| v.f64() >= 0.5).collect();
            self.add_image(&MetricReport::of_image(&p, &t, threshold));
        }
        Ok(())
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn report(&self) -> MetricReport {
        let n = self.images.max(1) as f64;
        let [iou, f1, accuracy, auc, precision, recall] = self.sum.map(|s| s / n);
        MetricReport { iou, f1, accuracy, auc, precision, recall }
    }
}

/// Per-image metrics of `probs` against `truth` at `threshold`, averaged over
/// the batch axis.
pub fn metrics<T: Scalar>(probs: &Tensor<T>, truth: &Tensor<T>, threshold: f64) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new();
    acc.add_batch(probs, truth, threshold)?;
    Ok(acc.report())
}
