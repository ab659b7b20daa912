//! Optimizer, schedules, metrics, synthetic data and the training loop.

mod data;
mod metrics;
mod optim;
mod schedule;
mod synth;
mod trainer;

pub use data::{split_holdout, Dataset, Sample};
pub use metrics::{
    compute_miou, evaluate, mean_iou, restricted_argmax, ClassRow, MetricSet, ShapeIou,
};
pub use optim::{adam_step, adam_update, AdamConfig, Moments, OptimizerState};
pub use schedule::ScheduleConfig;
pub use synth::{synth_dataset, SYNTH_CLASSES, SYNTH_PART_SETS};
pub use trainer::{train, EpochLog, TrainConfig, TrainOutcome};
