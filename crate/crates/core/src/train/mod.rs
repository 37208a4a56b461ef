//! Objectives and optimizers for fitting the model to data.

mod adam;
mod losses;
mod map;

pub use adam::{Adam, AdamConfig};
pub use losses::{
    diff_loss_on_tape, diff_residuals_on_tape, normalize_windows, recurrent_loss_on_tape,
    recurrent_residuals_on_tape, weight_decay_on_tape, DiffBatch, DiffResiduals, LossWeights,
    WindowResiduals,
};
pub use map::{train_map, TrainConfig, TrainData, TrainReport};
