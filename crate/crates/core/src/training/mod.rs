//! Training loops, checkpoints and inference.

pub mod checkpoint;
pub mod data;
pub mod trainer;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_SCHEMA};
pub use data::{Dataset, PrepMode, Preparer, TaskSplits};
pub use trainer::{
    infer, overfit_one_batch, predict, train, train_baseline, train_sastnet, write_log, EpochRecord, Inference,
    Predictions, Resume, StepRecord, TrainConfig, TrainOutcome,
};

/// Learning-rate multiplier at `step` of `total`: linear warmup over the
/// first 5% of steps, then cosine decay to 0.1.
pub fn lr_factor(step: usize, total: usize) -> f64 {
    let total = total.max(1);
    let warm = ((total as f64 * 0.05).ceil() as usize).max(1);
    if step < warm {
        return (step + 1) as f64 / warm as f64;
    }
    let p = ((step - warm) as f64 / (total - warm).max(1) as f64).min(1.0);
    0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
}
