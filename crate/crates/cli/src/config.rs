//! Run configuration shared by the training and prediction commands.

use clap::ValueEnum;
use koopman_core::model::NormalizationMode;
use koopman_core::train::LossWeights;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Which residuals the objective is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    /// State and derivative pairs; the generator enters through the
    /// linearized latent flow.
    Diff,
    /// Trajectory windows propagated through the matrix exponential.
    Recurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Point estimate.
    Map,
    /// Variational posterior.
    Vi,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeightsConfig {
    #[serde(default = "one")]
    pub linear: f64,
    #[serde(default = "one")]
    pub reconstruction: f64,
}

impl Default for LossWeightsConfig {
    fn default() -> Self {
        LossWeightsConfig {
            linear: 1.0,
            reconstruction: 1.0,
        }
    }
}

impl From<LossWeightsConfig> for LossWeights {
    fn from(w: LossWeightsConfig) -> LossWeights {
        LossWeights {
            linear: w.linear,
            reconstruction: w.reconstruction,
        }
    }
}

fn one() -> f64 {
    1.0
}

/// JSON schema of `--config`. `layers` lists the full width stack from the
/// state dimension down to the latent width and back out; the first interior
/// entry equal to `latent_dim` splits it into encoder and decoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub form: Form,
    pub mode: Mode,
    pub layers: Vec<usize>,
    pub latent_dim: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Rows per training window (recurrent form only).
    #[serde(default = "default_window_length")]
    pub window_length: usize,
    /// Offset between consecutive window starts (recurrent form only).
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_normalization")]
    pub normalization_mode: NormalizationMode,
    #[serde(default)]
    pub loss_weights: LossWeightsConfig,
    /// Point-estimate epochs run before the vi phase; defaults to a tenth
    /// of `epochs`, at least one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start_epochs: Option<usize>,
}

fn default_learning_rate() -> f64 {
    1e-3
}

fn default_epochs() -> usize {
    100
}

fn default_batch_size() -> usize {
    32
}

fn default_weight_decay() -> f64 {
    1e-6
}

fn default_window_length() -> usize {
    10
}

fn default_stride() -> usize {
    1
}

fn default_normalization() -> NormalizationMode {
    NormalizationMode::PerComponent
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.latent_dim == 0 {
            return Err(CliError::Usage("latent_dim must be at least 1".into()));
        }
        if self.layers.len() < 3 {
            return Err(CliError::Usage(
                "layers must list encoder and decoder widths around the latent width".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(CliError::Usage("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(CliError::Usage("batch_size must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(CliError::Usage("stride must be at least 1".into()));
        }
        if self.window_length < 2 {
            return Err(CliError::Usage("window_length must be at least 2".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(CliError::Usage("weight_decay must be nonnegative".into()));
        }
        let w = &self.loss_weights;
        if !(w.linear.is_finite()
            && w.linear >= 0.0
            && w.reconstruction.is_finite()
            && w.reconstruction >= 0.0)
        {
            return Err(CliError::Usage("loss weights must be nonnegative".into()));
        }
        self.encoder_decoder_widths().map(|_| ())
    }

    /// Split `layers` at the first interior occurrence of the latent width.
    pub fn encoder_decoder_widths(&self) -> Result<(Vec<usize>, Vec<usize>), CliError> {
        if self.layers.iter().any(|&w| w == 0) {
            return Err(CliError::Usage("layer widths must be positive".into()));
        }
        let split = self.layers[1..]
            .iter()
            .position(|&w| w == self.latent_dim)
            .map(|i| i + 1)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "layers {:?} never reach latent_dim {}",
                    self.layers, self.latent_dim
                ))
            })?;
        if split + 1 == self.layers.len() {
            return Err(CliError::Usage(
                "layers end at the latent width; decoder widths are missing".into(),
            ));
        }
        Ok((
            self.layers[..=split].to_vec(),
            self.layers[split..].to_vec(),
        ))
    }
}
