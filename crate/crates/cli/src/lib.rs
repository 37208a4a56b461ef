//! Command line front end: dataset generation, POD projection, training,
//! spectrum reports, and forecasting. Every run writes a manifest with
//! content digests of its inputs and outputs, so a rerun under the same
//! configuration and seed can be checked byte for byte.

mod config;
mod eigen;
mod generate;
mod manifest;
mod pod;
mod predict;
mod train;

pub use config::{Form, LossWeightsConfig, Mode, RunConfig};
pub use manifest::{sha256_file, FileDigest, RunManifest};
pub use pod::PodBasisFile;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use koopman_core::model::KoopmanModel;
use koopman_core::vi::VariationalPosterior;
use koopman_core::CoreError;
use thiserror::Error;

/// Errors carry the process exit code: usage problems exit with 2,
/// unreadable or malformed data with 3, numeric failures during iteration
/// with 4.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> CliError {
        match err {
            CoreError::Diverged { .. }
            | CoreError::UnstableSpectrum(_)
            | CoreError::NonFinite(_)
            | CoreError::Convergence { .. }
            | CoreError::Singular(_) => CliError::Numeric(err.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> CliError {
        CliError::Data(format!("io error: {err}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> CliError {
        CliError::Data(format!("json error: {err}"))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "koopman",
    version,
    about = "Learn continuous-time Koopman operators from dynamical system data"
)]
pub struct Cli {
    /// JSON run configuration; required by train, optional elsewhere.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the config file (0 without one).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker budget; this build runs single threaded and accepts any
    /// positive value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample datasets from the built-in systems.
    Generate(generate::GenerateArgs),
    /// Project snapshots onto an energy-ranked linear basis.
    Pod(pod::PodArgs),
    /// Fit a model (map) or a posterior (vi) to a dataset.
    Train(train::TrainArgs),
    /// Report the generator spectrum of a checkpoint.
    Eigen(eigen::EigenArgs),
    /// Forecast from a checkpoint, with uncertainty for posteriors.
    Predict(predict::PredictArgs),
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", cli.out.display())))?;
    match &cli.command {
        Command::Generate(args) => generate::run(cli, args),
        Command::Pod(args) => pod::run(cli, args),
        Command::Train(args) => train::run(cli, args),
        Command::Eigen(args) => eigen::run(cli, args),
        Command::Predict(args) => predict::run(cli, args),
    }
}

/// Parsed config file with the global seed override applied. Config
/// problems are usage errors: the file is part of the invocation.
pub fn load_config(cli: &Cli) -> Result<Option<RunConfig>, CliError> {
    let Some(path) = &cli.config else {
        return Ok(None);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(Some(config))
}

/// Seed precedence: --seed flag, then the config file, then 0.
pub fn effective_seed(cli: &Cli, config: Option<&RunConfig>) -> u64 {
    cli.seed.or(config.map(|c| c.seed)).unwrap_or(0)
}

pub(crate) enum Checkpoint {
    Model(KoopmanModel),
    Posterior(VariationalPosterior),
}

/// Tell model and posterior checkpoints apart by their top-level keys.
pub(crate) fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("checkpoint {}: {e}", path.display())))?;
    if value.get("template").is_some() {
        Ok(Checkpoint::Posterior(koopman_core::vi::load_posterior(path)?))
    } else if value.get("state_dim").is_some() {
        Ok(Checkpoint::Model(koopman_core::model::load_model(path)?))
    } else {
        Err(CliError::Data(format!(
            "checkpoint {} is neither a model nor a posterior",
            path.display()
        )))
    }
}

pub(crate) fn parse_vector(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|_| {
            CliError::Usage(format!(
                "cannot parse \"{text}\" as comma separated numbers"
            ))
        })
}

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::Usage(String::new()).exit_code(), 2);
        assert_eq!(CliError::Data(String::new()).exit_code(), 3);
        assert_eq!(CliError::Numeric(String::new()).exit_code(), 4);
    }

    #[test]
    fn core_errors_split_into_data_and_numeric() {
        let diverged = CoreError::Diverged {
            epoch: 3,
            context: "loss".into(),
        };
        assert_eq!(CliError::from(diverged).exit_code(), 4);
        assert_eq!(
            CliError::from(CoreError::UnstableSpectrum("k".into())).exit_code(),
            4
        );
        assert_eq!(
            CliError::from(CoreError::Format("bad csv".into())).exit_code(),
            3
        );
        assert_eq!(
            CliError::from(CoreError::Data("short".into())).exit_code(),
            3
        );
    }

    #[test]
    fn vectors_parse_with_spaces() {
        assert_eq!(parse_vector("1.5, -2,3e-1").unwrap(), vec![1.5, -2.0, 0.3]);
        assert!(matches!(parse_vector("1,two"), Err(CliError::Usage(_))));
    }
}
