//! Optimizers, the epoch loop, evaluation and the bag-of-words baseline.

mod baseline;
mod fit;
mod optim;

pub use baseline::{bow_train_config, train_bow_baseline, BowModel};
pub use fit::{
    evaluate, train, train_epoch, EpochMetrics, EvalResult, TrainOptions, TrainOutcome, TrainReport, TrainerState,
    BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE, REPORT_FILE,
};
pub use optim::{adam_step, clip_gradients, optimizer_step, sgd_step, OptimizerKind, OptimizerState, TrainConfig};
