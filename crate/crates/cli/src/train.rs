//! Model fitting: point estimates and variational posteriors.

use std::fs;
use std::io::{Cursor, Write};
use std::path::PathBuf;

use clap::Args;
use koopman_core::data::{read_derivative_csv, read_trajectory_csv};
use koopman_core::model::{init_from_dmd, save_model, DmdData, KoopmanModel, Normalizer, Trainable};
use koopman_core::train::{train_map, AdamConfig, TrainConfig, TrainData};
use koopman_core::vi::{save_posterior, train_vi, PriorSpec, ViConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Form, Mode, RunConfig};
use crate::manifest::RunManifest;
use crate::{create_file, Cli, CliError};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Derivative CSV for the diff form, trajectory CSV for the recurrent
    /// form.
    pub dataset: PathBuf,
}

pub fn run(cli: &Cli, args: &TrainArgs) -> Result<(), CliError> {
    let config = crate::load_config(cli)?
        .ok_or_else(|| CliError::Usage("train requires --config".into()))?;
    let (enc_widths, dec_widths) = config.encoder_decoder_widths()?;

    let text = fs::read_to_string(&args.dataset)
        .map_err(|e| CliError::Data(format!("cannot read dataset {}: {e}", args.dataset.display())))?;
    let looks_like_trajectories = text.lines().next().unwrap_or("").starts_with("traj_id,");
    match config.form {
        Form::Diff if looks_like_trajectories => {
            return Err(CliError::Usage(format!(
                "{} holds trajectories; the diff form trains on derivative pairs",
                args.dataset.display()
            )));
        }
        Form::Recurrent if !looks_like_trajectories => {
            return Err(CliError::Usage(format!(
                "{} holds derivative pairs; the recurrent form trains on trajectories",
                args.dataset.display()
            )));
        }
        _ => {}
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let reader = Cursor::new(text.into_bytes());
    match config.form {
        Form::Diff => {
            let ds = read_derivative_csv(reader)?;
            let normalizer = Normalizer::fit(&ds.states, config.normalization_mode)?;
            let model = init_from_dmd(
                DmdData::Derivatives(&ds),
                config.latent_dim,
                normalizer,
                &enc_widths,
                &dec_widths,
                &mut rng,
            )?;
            finish(cli, args, &config, model, &TrainData::Derivatives(&ds))
        }
        Form::Recurrent => {
            let tds = read_trajectory_csv(reader)?;
            let windows = tds.windows(config.window_length, config.stride)?;
            if windows.is_empty() {
                return Err(CliError::Data(format!(
                    "no complete windows of length {} at stride {} in {}",
                    config.window_length,
                    config.stride,
                    args.dataset.display()
                )));
            }
            let normalizer = Normalizer::fit(&tds.stack_states(), config.normalization_mode)?;
            let model = init_from_dmd(
                DmdData::Trajectories(&tds),
                config.latent_dim,
                normalizer,
                &enc_widths,
                &dec_widths,
                &mut rng,
            )?;
            finish(cli, args, &config, model, &TrainData::Windows(&windows))
        }
    }
}

fn finish(
    cli: &Cli,
    args: &TrainArgs,
    config: &RunConfig,
    mut model: KoopmanModel,
    data: &TrainData,
) -> Result<(), CliError> {
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let (checkpoint, history_header, history) = match config.mode {
        Mode::Map => {
            let train_config = TrainConfig {
                adam,
                epochs: config.epochs,
                batch_size: config.batch_size,
                weight_decay: config.weight_decay,
                loss_weights: config.loss_weights.into(),
                seed: config.seed,
                trainable: Trainable::All,
            };
            let report = train_map(&mut model, data, &train_config)?;
            let path = cli.out.join("model.json");
            save_model(&model, &path)?;
            if let Some(last) = report.loss_history.last() {
                println!("map training finished, final loss {last:.6}");
            }
            (path, "epoch,loss", report.loss_history)
        }
        Mode::Vi => {
            let vi_config = ViConfig {
                adam,
                epochs: config.epochs,
                warm_start_epochs: config
                    .warm_start_epochs
                    .unwrap_or_else(|| (config.epochs / 10).max(1)),
                batch_size: config.batch_size,
                weight_decay: config.weight_decay,
                loss_weights: config.loss_weights.into(),
                seed: config.seed,
                priors: PriorSpec::default(),
            };
            let (q, report) = train_vi(&model, data, &vi_config)?;
            let path = cli.out.join("posterior.json");
            save_posterior(&path, &q)?;
            if let Some(last) = report.elbo_history.last() {
                println!("vi training finished, final elbo {last:.6}");
            }
            (path, "epoch,elbo", report.elbo_history)
        }
    };

    let history_path = cli.out.join("history.csv");
    let mut file = create_file(&history_path)?;
    writeln!(file, "{history_header}")?;
    for (epoch, value) in history.iter().enumerate() {
        writeln!(file, "{},{}", epoch + 1, value)?;
    }
    file.flush()?;

    let mut manifest = RunManifest::new("train", config.seed);
    manifest.config = Some(serde_json::to_value(config)?);
    manifest.add_input(&args.dataset)?;
    manifest.add_output(&checkpoint)?;
    manifest.add_output(&history_path)?;
    manifest.write(&cli.out)
}
