//! Multi-task objective, Adam and the training loop.

mod adam;
mod loss;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{
    bce_multilabel, clamp_warnings, loss_on_tape, stan_loss, LossBreakdown, LossTerms, LossVars,
};
pub use trainer::{train, train_from, BestCheckpoint, EpochLog, TrainConfig, TrainOutcome};
