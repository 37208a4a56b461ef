//! Structured-text model checkpoints.
//!
//! The format is JSON with a fixed field order, so write -> read -> write
//! is byte-identical (floats print in shortest round-trip form).

use super::koopman::KoopmanModel;
use super::normalizer::Normalizer;
use super::stable::StableKoopman;
use crate::autodiff::FeedForwardNet;
use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub state_dim: usize,
    pub latent_dim: usize,
    pub normalizer: Normalizer,
    pub v_d: Matrix,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub encoder_weights: Vec<Matrix>,
    pub encoder_biases: Vec<Matrix>,
    pub decoder_weights: Vec<Matrix>,
    pub decoder_biases: Vec<Matrix>,
    pub sigma: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl ModelCheckpoint {
    pub fn from_model(model: &KoopmanModel) -> Self {
        ModelCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            state_dim: model.state_dim(),
            latent_dim: model.latent_dim(),
            normalizer: model.normalizer().clone(),
            v_d: model.v_d().clone(),
            encoder_widths: model.encoder().widths().to_vec(),
            decoder_widths: model.decoder().widths().to_vec(),
            encoder_weights: model.encoder().weights().to_vec(),
            encoder_biases: model.encoder().biases().to_vec(),
            decoder_weights: model.decoder().weights().to_vec(),
            decoder_biases: model.decoder().biases().to_vec(),
            sigma: model.stable().sigma().to_vec(),
            zeta: model.stable().zeta().to_vec(),
        }
    }

    pub fn into_model(self) -> Result<KoopmanModel> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CoreError::Format(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        if self.normalizer.dim() != self.state_dim {
            return Err(CoreError::Format(format!(
                "field normalizer: dimension {} does not match state_dim {}",
                self.normalizer.dim(),
                self.state_dim
            )));
        }
        let encoder =
            FeedForwardNet::from_parts(self.encoder_widths, self.encoder_weights, self.encoder_biases)
                .map_err(|e| CoreError::Format(format!("field encoder_weights: {e}")))?;
        let decoder =
            FeedForwardNet::from_parts(self.decoder_widths, self.decoder_weights, self.decoder_biases)
                .map_err(|e| CoreError::Format(format!("field decoder_weights: {e}")))?;
        if self.sigma.len() != self.latent_dim {
            return Err(CoreError::Format(format!(
                "field sigma: {} entries, expected {}",
                self.sigma.len(),
                self.latent_dim
            )));
        }
        let stable = StableKoopman::new(self.sigma, self.zeta)
            .map_err(|e| CoreError::Format(format!("field zeta: {e}")))?;
        KoopmanModel::new(encoder, decoder, self.v_d, stable, self.normalizer)
            .map_err(|e| CoreError::Format(format!("field v_d: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CoreError::Format(format!("checkpoint JSON: {e}")))
    }
}

pub fn save_model(model: &KoopmanModel, path: &Path) -> Result<()> {
    std::fs::write(path, ModelCheckpoint::from_model(model).to_json())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<KoopmanModel> {
    let text = std::fs::read_to_string(path)?;
    ModelCheckpoint::from_json(&text)?.into_model()
}
