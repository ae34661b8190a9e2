//! Multi-task optimization: adaptive-moment optimizers, cosine annealing with
//! rewinding, epoch-level training with best-epoch selection, and the
//! retrain-from-scratch learning-rate sweep.

mod fit;
mod optim;
mod schedule;

pub use fit::{
    epoch_csv_header, epoch_csv_row, evaluate, retrain_from_scratch, select_best_epoch, train, write_epoch_csv,
    BatchGrads, BestModelPolicy, EpochRecord, Evaluation, RetrainOutcome, RetrainRun, TrainConfig, TrainOutcome,
    Trainer,
};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use schedule::{rewind, CosineSchedule};
