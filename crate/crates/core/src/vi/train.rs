//! Stochastic ELBO optimization with a point-estimate warm start.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::Window;
use crate::error::{CoreError, Result};
use crate::model::{KoopmanModel, Trainable};
use crate::train::{train_map, Adam, AdamConfig, LossWeights, TrainConfig, TrainData};

use super::elbo::{
    accumulate_sample, elbo_mc_tape, finish_estimate, prepare_likelihood, LikelihoodData,
    PreparedLikelihood,
};
use super::{PriorSpec, VariationalPosterior};

#[derive(Debug, Clone, Copy)]
pub struct ViConfig {
    pub adam: AdamConfig,
    /// ELBO optimization epochs.
    pub epochs: usize,
    /// Point-estimate epochs run first to center the posterior means.
    pub warm_start_epochs: usize,
    pub batch_size: usize,
    /// Weight decay for the warm start only; the Bayesian phase regularizes
    /// through its priors.
    pub weight_decay: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub priors: PriorSpec,
}

impl Default for ViConfig {
    fn default() -> Self {
        ViConfig {
            adam: AdamConfig::default(),
            epochs: 200,
            warm_start_epochs: 20,
            batch_size: 32,
            weight_decay: 1e-6,
            loss_weights: LossWeights::default(),
            seed: 0,
            priors: PriorSpec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViReport {
    /// Per-epoch mean of the minibatch ELBO estimates.
    pub elbo_history: Vec<f64>,
    /// Loss trace of the warm start, empty when it was skipped.
    pub warm_start_loss: Vec<f64>,
}

/// Fit a mean-field posterior by maximizing the reparameterized ELBO, one
/// Monte Carlo sample per step. The template model is left untouched; means
/// start from a short point-estimate run on a copy.
pub fn train_vi(
    model: &KoopmanModel,
    data: &TrainData,
    config: &ViConfig,
) -> Result<(VariationalPosterior, ViReport)> {
    let mut warm = model.clone();
    let mut warm_start_loss = Vec::new();
    if config.warm_start_epochs > 0 {
        let map_config = TrainConfig {
            adam: config.adam,
            epochs: config.warm_start_epochs,
            batch_size: config.batch_size,
            weight_decay: config.weight_decay,
            loss_weights: config.loss_weights,
            seed: config.seed,
            trainable: Trainable::All,
        };
        let report = train_map(&mut warm, data, &map_config)?;
        warm_start_loss = report.loss_history;
    }

    let mut q = VariationalPosterior::from_model(&warm);
    let prepared = prepare_likelihood(&q, data);
    let num_items = match &prepared {
        PreparedLikelihood::Diff(b) => b.len(),
        PreparedLikelihood::Windows(ws) => ws.len(),
    };
    if num_items == 0 {
        return Err(CoreError::Data("empty training set".into()));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mc_rng = ChaCha8Rng::seed_from_u64(config.seed);
    mc_rng.set_stream(1);
    let mut adam = Adam::new(config.adam, q.num_variational_params());
    let batch_size = config.batch_size.clamp(1, num_items);
    let mut history = Vec::with_capacity(config.epochs);
    let mut last_finite = f64::NAN;

    for epoch in 0..config.epochs {
        let mut idx: Vec<usize> = (0..num_items).collect();
        idx.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for chunk in idx.chunks(batch_size) {
            let rescale = num_items as f64 / chunk.len() as f64;
            let mut value = 0.0;
            let mut grad = vec![0.0; q.num_variational_params()];
            match &prepared {
                PreparedLikelihood::Diff(batch) => {
                    let sub = batch.select(chunk);
                    let parts = elbo_mc_tape(
                        &q,
                        &LikelihoodData::Diff(&sub),
                        &config.priors,
                        rescale,
                        &mut mc_rng,
                    )?;
                    accumulate_sample(&q, &parts, &mut value, &mut grad)?;
                }
                PreparedLikelihood::Windows(ws) => {
                    let sub: Vec<&Window> = chunk.iter().map(|&i| &ws[i]).collect();
                    let parts = elbo_mc_tape(
                        &q,
                        &LikelihoodData::Windows(&sub),
                        &config.priors,
                        rescale,
                        &mut mc_rng,
                    )?;
                    accumulate_sample(&q, &parts, &mut value, &mut grad)?;
                }
            }
            finish_estimate(&q, 1, &mut value, &mut grad);
            if !value.is_finite() {
                return Err(CoreError::Diverged {
                    epoch,
                    context: format!("last finite ELBO {last_finite:.6e}"),
                });
            }

            // Adam minimizes, so feed it the negated ascent direction
            for g in grad.iter_mut() {
                *g = -*g;
            }
            let mut flat = q.flatten();
            adam.step(&mut flat, &grad);
            q.set_from_flat(&flat);

            last_finite = value;
            total += value;
            steps += 1;
        }
        history.push(total / steps as f64);
    }

    Ok((
        q,
        ViReport {
            elbo_history: history,
            warm_start_loss,
        },
    ))
}
