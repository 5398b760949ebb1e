//! Training losses on logits and thresholded segmentation metrics.

mod loss;
mod metrics;

pub use loss::{bce_loss, combined_loss, dice_loss, LossConfig};
pub use metrics::{metrics, roc_auc, Confusion, MetricAccumulator, MetricReport, AUC_THRESHOLDS, METRIC_CSV_HEADER};
