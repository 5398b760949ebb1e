//! Data sets, augmentation, optimization and the train/evaluate loops.

mod ablate;
mod data;
mod optim;
mod train;

pub use ablate::{ablate, ablation_csv, AblationRow, ABLATION_CSV_HEADER};
pub use data::{
    augment, batch, load_dataset, parse_ratio, plane_to_gray, save_dataset, split, synth_dataset, synth_dataset_with,
    synth_sample, AugmentConfig, Sample, SynthConfig, Transform,
};
pub use optim::{cosine_lr, Adam};
pub use train::{
    evaluate, evaluate_checkpoint, predict_probs, train, train_on, window_means, write_predictions, EpochLog,
    TrainConfig, TrainSummary, TRAIN_CSV_HEADER,
};
