//! Point-estimate training: minibatched Adam on the chosen objective.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{DiffDataset, Window};
use crate::error::{CoreError, Result};
use crate::model::{KoopmanModel, Trainable};

use super::adam::{Adam, AdamConfig};
use super::losses::{
    diff_loss_on_tape, normalize_windows, recurrent_loss_on_tape, weight_decay_on_tape,
    DiffBatch, LossWeights,
};

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Samples per step for the derivative objective, windows per step for
    /// the recurrent one. Clamped to the dataset size.
    pub batch_size: usize,
    pub weight_decay: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub trainable: Trainable,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            epochs: 100,
            batch_size: 32,
            weight_decay: 1e-6,
            loss_weights: LossWeights::default(),
            seed: 0,
            trainable: Trainable::All,
        }
    }
}

pub enum TrainData<'a> {
    Derivatives(&'a DiffDataset),
    Windows(&'a [Window]),
}

/// Per-epoch mean step loss.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
}

/// Minimize the objective with Adam. Minibatches are drawn by shuffling
/// indices each epoch; the model is updated in place. A non-finite loss
/// aborts with the epoch it surfaced in.
pub fn train_map(
    model: &mut KoopmanModel,
    data: &TrainData,
    config: &TrainConfig,
) -> Result<TrainReport> {
    match data {
        TrainData::Derivatives(ds) => {
            let batch = DiffBatch::prepare(model, ds);
            run(model, config, batch.len(), |model, idx| {
                let sub = batch.select(idx);
                let mut tape = Tape::new();
                let vars = model.vars(&mut tape, config.trainable);
                let mut loss =
                    diff_loss_on_tape(model, &mut tape, &vars, &sub, config.loss_weights);
                if let Some(wd) = weight_decay_on_tape(&mut tape, &vars, config.weight_decay) {
                    loss = tape.add(loss, wd);
                }
                Ok((tape, vars, loss))
            })
        }
        TrainData::Windows(ws) => {
            if ws.is_empty() {
                return Err(CoreError::Data("no windows to train on".into()));
            }
            let windows = normalize_windows(model, ws);
            run(model, config, windows.len(), |model, idx| {
                let sub: Vec<&Window> = idx.iter().map(|&i| &windows[i]).collect();
                let mut tape = Tape::new();
                let vars = model.vars(&mut tape, config.trainable);
                let mut loss = recurrent_loss_on_tape(
                    model,
                    &mut tape,
                    &vars,
                    &sub,
                    config.loss_weights,
                )?;
                if let Some(wd) = weight_decay_on_tape(&mut tape, &vars, config.weight_decay) {
                    loss = tape.add(loss, wd);
                }
                Ok((tape, vars, loss))
            })
        }
    }
}

fn run(
    model: &mut KoopmanModel,
    config: &TrainConfig,
    num_items: usize,
    mut build: impl FnMut(
        &KoopmanModel,
        &[usize],
    ) -> Result<(Tape, crate::model::ModelVars, crate::autodiff::Var)>,
) -> Result<TrainReport> {
    if num_items == 0 {
        return Err(CoreError::Data("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam, model.num_params());
    let batch_size = config.batch_size.clamp(1, num_items);
    let mut history = Vec::with_capacity(config.epochs);
    let mut last_finite = f64::NAN;

    for epoch in 0..config.epochs {
        let mut idx: Vec<usize> = (0..num_items).collect();
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for chunk in idx.chunks(batch_size) {
            let (tape, vars, loss) = build(model, chunk)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(CoreError::Diverged {
                    epoch,
                    context: format!("last finite loss {last_finite:.6e}"),
                });
            }
            let grads = tape.backward(loss)?;
            let flat_grads = model.collect_gradients(&tape, &grads, &vars);
            let mut params = model.flatten_params();
            adam.step(&mut params, &flat_grads);
            model.set_params(&params);

            let max_re = model.spectrum()?.max_real();
            if max_re > 1e-9 {
                return Err(CoreError::UnstableSpectrum(format!(
                    "max real part {max_re:.3e} after update at epoch {epoch}"
                )));
            }

            last_finite = value;
            total += value;
            steps += 1;
        }
        history.push(total / steps as f64);
    }
    Ok(TrainReport {
        loss_history: history,
    })
}
