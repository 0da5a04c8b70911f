//! Losses, learning-rate schedule, training loop, and evaluation.

mod evaluate;
mod loss;
mod schedule;
mod train;

pub use evaluate::{
    accuracy_of, evaluate, evaluate_prepared, format_predictions, parse_predictions, read_predictions,
    write_predictions, EvalResult, Prediction, PREDICTION_HEADER,
};
pub use loss::{aux_loss, aux_loss_var, total_loss, total_loss_var};
pub use schedule::lr_at;
pub use train::{mean_grads, sample_step, train, EpochRecord, Progress, SampleStep, TrainConfig, TrainLog};
