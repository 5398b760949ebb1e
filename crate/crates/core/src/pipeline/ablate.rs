use std::fs;

use super::data::{parse_ratio, split, Sample};
use super::train::{evaluate, train_on, EpochLog, TrainConfig};
use crate::error::Result;
use crate::model::{Model, ModelConfig, Variant};
use crate::objective::MetricReport;
use crate::tensor::Scalar;

pub const ABLATION_CSV_HEADER: &str = "variant,params,macs,epochs,best_epoch,final_train_loss,\
train_iou,train_f1,val_iou,val_f1,val_accuracy,val_auc,val_precision,val_recall";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub macs: u64,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub final_train_loss: f64,
    /// Final model scored on the training split.
    pub train: MetricReport,
    /// Final model scored on the validation split (training split when the
    /// validation split is empty).
    pub val: MetricReport,
    /// Mean minibatch loss of every epoch.
    pub train_losses: Vec<f64>,
    /// Loss on the whole training split after every epoch, in eval mode;
    /// empty unless `eval_train` is set.
    pub train_eval_losses: Vec<f64>,
}

impl AblationRow {
    pub fn csv_row(&self) -> String {
        let best = self.best_epoch.map(|e| e.to_string()).unwrap_or_default();
        let v = &self.val;
        format!(
            "{},{},{},{},{best},{},{},{},{},{},{},{},{},{}",
            self.variant,
            self.params,
            self.macs,
            self.epochs,
            self.final_train_loss,
            self.train.iou,
            self.train.f1,
            v.iou,
            v.f1,
            v.accuracy,
            v.auc,
            v.precision,
            v.recall
        )
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Train every variant from the same seed on the same split. With an output
/// directory each run writes under `<out>/<variant>/` and the comparison goes
/// to `<out>/ablation.csv`.
pub fn ablate<T: Scalar>(
    base: &ModelConfig,
    cfg: &TrainConfig,
    data: &[Sample],
    variants: &[Variant],
    on_epoch: &mut dyn FnMut(Variant, &EpochLog),
) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let (tr, va) = split(data, parse_ratio(&cfg.split)?, cfg.seed);
    let mut rows = Vec::new();
    for &variant in variants {
        let mcfg = ModelConfig { variant, ..base.clone() };
        let mut model = Model::<T>::build(&mcfg)?;
        let params = model.count_params();
        let size = tr.first().map(|s| (s.height(), s.width())).unwrap_or((32, 32));
        let macs = model.count_flops(&[1, mcfg.in_channels, size.0, size.1])?;
        let run_cfg = TrainConfig { out_dir: cfg.out_dir.as_ref().map(|d| d.join(variant.as_str())), ..cfg.clone() };
        let summary = train_on(&mut model, &run_cfg, &tr, &va, &mut |log| on_epoch(variant, log))?;
        let (train, _) = evaluate(&mut model, &tr, cfg.batch_size, &cfg.loss, cfg.threshold)?;
        let val =
            if va.is_empty() { train } else { evaluate(&mut model, &va, cfg.batch_size, &cfg.loss, cfg.threshold)?.0 };
        rows.push(AblationRow {
            variant,
            params,
            macs,
            epochs: cfg.epochs,
            best_epoch: summary.best_epoch,
            final_train_loss: summary.last().train_loss,
            train,
            val,
            train_losses: summary.train_losses(),
            train_eval_losses: summary.history.iter().filter_map(|l| l.train.map(|t| t.1)).collect(),
        });
    }
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("ablation.csv"), ablation_csv(&rows))?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth_dataset;

    #[test]
    fn every_variant_runs_and_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(5, 32, 1).unwrap();
        let base = ModelConfig { conv_channels: [4, 6, 8], embed_dims: [8, 10], ssm_state: 2, ..ModelConfig::tiny() };
        let cfg =
            TrainConfig { epochs: 1, batch_size: 2, out_dir: Some(dir.path().to_path_buf()), ..Default::default() };
        let mut seen = 0;
        let rows = ablate::<f32>(&base, &cfg, &data, &Variant::ALL, &mut |_, _| seen += 1).unwrap();
        assert_eq!(seen, 4);
        assert_eq!(rows.len(), 4);
        let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], ABLATION_CSV_HEADER);
        for (line, v) in lines[1..].iter().zip(Variant::ALL) {
            assert!(line.starts_with(&format!("{v},")));
            assert_eq!(line.split(',').count(), ABLATION_CSV_HEADER.split(',').count());
            assert!(dir.path().join(v.as_str()).join("final.ckpt").is_file());
        }
        assert!(rows.iter().all(|r| r.train_losses.len() == 1 && r.train_eval_losses.len() == 1));
        // the token MLP variant has no spline coefficients in its Mamba stage
        assert!(rows[0].params < rows[1].params);
    }
}
