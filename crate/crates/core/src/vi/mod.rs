//! Mean-field variational inference over every model parameter.
//!
//! Each parameter group carries an independent Gaussian factor on an
//! unconstrained coordinate. Positive quantities (prior scales, the operator
//! diagonal sigma^2, the Gamma shape, the noise covariance diagonals) are
//! represented through their logarithm, making the pushed-forward posterior
//! log-normal.

mod elbo;
mod train;

pub use elbo::{elbo_estimate, log_joint, log_likelihood};
pub use train::{train_vi, ViConfig, ViReport};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use crate::model::{KoopmanModel, ModelCheckpoint};

/// Lower clamp for sigma^2 when seeding log-coordinates from a point model,
/// where an exactly oscillatory operator has sigma = 0.
const MIN_LOG_SIGMA_SQ: f64 = -18.0;

/// Initial log-stddev of every factor.
const INIT_LOG_STD: f64 = -5.0;

/// Hyperprior and likelihood-prior constants.
#[derive(Debug, Clone, Copy)]
pub struct PriorSpec {
    /// Scale of the half-Cauchy hyperprior shared by all positive
    /// hyperparameters.
    pub cauchy_scale: f64,
    /// Rate of the Gamma prior on each sigma_i^2.
    pub sigma_sq_rate: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            cauchy_scale: 1.0,
            sigma_sq_rate: 0.5,
        }
    }
}

/// Diagonal residual covariances of the likelihood.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LikelihoodSpec {
    pub lambda_rec: Vec<f64>,
    pub lambda_lin: Vec<f64>,
}

impl LikelihoodSpec {
    pub fn validate(&self) -> Result<()> {
        if self
            .lambda_rec
            .iter()
            .chain(self.lambda_lin.iter())
            .any(|&l| !(l > 0.0) || !l.is_finite())
        {
            return Err(CoreError::Domain(
                "noise covariance entries must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// One mean-field factor: elementwise independent Gaussians on the
/// unconstrained coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Factor {
    pub mean: Matrix,
    pub log_std: Matrix,
}

impl Factor {
    fn point(mean: Matrix) -> Factor {
        let log_std = Matrix::from_vec(
            mean.rows(),
            mean.cols(),
            vec![INIT_LOG_STD; mean.data().len()],
        );
        Factor { mean, log_std }
    }

    fn scalar_point(v: f64) -> Factor {
        Factor::point(Matrix::from_vec(1, 1, vec![v]))
    }

    pub fn len(&self) -> usize {
        self.mean.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(
            self.mean.rows(),
            self.mean.cols(),
            self.mean
                .data()
                .iter()
                .zip(self.log_std.data())
                .map(|(&m, &ls)| {
                    let eps: f64 = rng.sample(StandardNormal);
                    m + ls.exp() * eps
                })
                .collect(),
        )
    }
}

/// All sampled values of one posterior draw, on the natural (constrained)
/// scale. The operator diagonal lives inside `model` as sigma = sqrt of the
/// drawn sigma^2.
#[derive(Debug, Clone)]
pub struct PosteriorDraw {
    pub model: KoopmanModel,
    pub noise: LikelihoodSpec,
    pub enc_weight_scales: Vec<f64>,
    pub enc_bias_scales: Vec<f64>,
    pub dec_weight_scales: Vec<f64>,
    pub dec_bias_scales: Vec<f64>,
    pub zeta_scale: f64,
    pub gamma_shape: f64,
}

/// Fully factorized posterior over the model and its hyperparameters,
/// anchored to a template model that fixes architecture, embedding, and
/// normalization.
#[derive(Debug, Clone)]
pub struct VariationalPosterior {
    template: KoopmanModel,
    pub enc_weights: Vec<Factor>,
    pub enc_biases: Vec<Factor>,
    pub dec_weights: Vec<Factor>,
    pub dec_biases: Vec<Factor>,
    pub zeta: Factor,
    /// log sigma_i^2
    pub log_sigma_sq: Factor,
    pub enc_weight_scales: Vec<Factor>,
    pub enc_bias_scales: Vec<Factor>,
    pub dec_weight_scales: Vec<Factor>,
    pub dec_bias_scales: Vec<Factor>,
    pub zeta_scale: Factor,
    pub gamma_shape: Factor,
    pub lambda_rec: Factor,
    pub lambda_lin: Factor,
}

impl VariationalPosterior {
    /// Point-mass-like initialization centered on a fitted model:
    /// parameter means copy the model, hyperparameter log-means start at 0
    /// (scale 1), all log-stddevs at -5.
    pub fn from_model(model: &KoopmanModel) -> VariationalPosterior {
        let enc = model.encoder();
        let dec = model.decoder();
        let d = model.latent_dim();
        let n = model.state_dim();
        let log_sigma_sq = Matrix::from_vec(
            1,
            d,
            model
                .stable()
                .sigma()
                .iter()
                .map(|&s| (s * s).ln().max(MIN_LOG_SIGMA_SQ))
                .collect(),
        );
        VariationalPosterior {
            template: model.clone(),
            enc_weights: (0..enc.num_layers())
                .map(|l| Factor::point(enc.weight(l).clone()))
                .collect(),
            enc_biases: (0..enc.num_layers())
                .map(|l| Factor::point(enc.bias(l).clone()))
                .collect(),
            dec_weights: (0..dec.num_layers())
                .map(|l| Factor::point(dec.weight(l).clone()))
                .collect(),
            dec_biases: (0..dec.num_layers())
                .map(|l| Factor::point(dec.bias(l).clone()))
                .collect(),
            zeta: Factor::point(Matrix::from_vec(
                1,
                d - 1,
                model.stable().zeta().to_vec(),
            )),
            log_sigma_sq: Factor::point(log_sigma_sq),
            enc_weight_scales: (0..enc.num_layers())
                .map(|_| Factor::scalar_point(0.0))
                .collect(),
            enc_bias_scales: (0..enc.num_layers())
                .map(|_| Factor::scalar_point(0.0))
                .collect(),
            dec_weight_scales: (0..dec.num_layers())
                .map(|_| Factor::scalar_point(0.0))
                .collect(),
            dec_bias_scales: (0..dec.num_layers())
                .map(|_| Factor::scalar_point(0.0))
                .collect(),
            zeta_scale: Factor::scalar_point(0.0),
            gamma_shape: Factor::scalar_point(0.0),
            lambda_rec: Factor::point(Matrix::zeros(1, n)),
            lambda_lin: Factor::point(Matrix::zeros(1, d)),
        }
    }

    pub fn template(&self) -> &KoopmanModel {
        &self.template
    }

    /// Factors in the canonical order used by `flatten`, sampling, and
    /// gradient collection.
    pub fn factors(&self) -> Vec<&Factor> {
        let mut fs = Vec::new();
        for l in 0..self.enc_weights.len() {
            fs.push(&self.enc_weights[l]);
            fs.push(&self.enc_biases[l]);
        }
        for l in 0..self.dec_weights.len() {
            fs.push(&self.dec_weights[l]);
            fs.push(&self.dec_biases[l]);
        }
        fs.push(&self.zeta);
        fs.push(&self.log_sigma_sq);
        for l in 0..self.enc_weight_scales.len() {
            fs.push(&self.enc_weight_scales[l]);
            fs.push(&self.enc_bias_scales[l]);
        }
        for l in 0..self.dec_weight_scales.len() {
            fs.push(&self.dec_weight_scales[l]);
            fs.push(&self.dec_bias_scales[l]);
        }
        fs.push(&self.zeta_scale);
        fs.push(&self.gamma_shape);
        fs.push(&self.lambda_rec);
        fs.push(&self.lambda_lin);
        fs
    }

    pub(crate) fn factors_mut(&mut self) -> Vec<&mut Factor> {
        let mut fs: Vec<&mut Factor> = Vec::new();
        let ne = self.enc_weights.len();
        let nd = self.dec_weights.len();
        for (w, b) in self.enc_weights.iter_mut().zip(self.enc_biases.iter_mut()) {
            fs.push(w);
            fs.push(b);
        }
        for (w, b) in self.dec_weights.iter_mut().zip(self.dec_biases.iter_mut()) {
            fs.push(w);
            fs.push(b);
        }
        fs.push(&mut self.zeta);
        fs.push(&mut self.log_sigma_sq);
        for (w, b) in self
            .enc_weight_scales
            .iter_mut()
            .zip(self.enc_bias_scales.iter_mut())
        {
            fs.push(w);
            fs.push(b);
        }
        for (w, b) in self
            .dec_weight_scales
            .iter_mut()
            .zip(self.dec_bias_scales.iter_mut())
        {
            fs.push(w);
            fs.push(b);
        }
        fs.push(&mut self.zeta_scale);
        fs.push(&mut self.gamma_shape);
        fs.push(&mut self.lambda_rec);
        fs.push(&mut self.lambda_lin);
        debug_assert_eq!(fs.len(), 4 * ne + 4 * nd + 6);
        fs
    }

    /// Count of (mean, log-stddev) scalars across all factors.
    pub fn num_variational_params(&self) -> usize {
        2 * self.factors().iter().map(|f| f.len()).sum::<usize>()
    }

    /// Per factor: means then log-stddevs, factors in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_variational_params());
        for f in self.factors() {
            flat.extend_from_slice(f.mean.data());
            flat.extend_from_slice(f.log_std.data());
        }
        flat
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(
            flat.len(),
            self.num_variational_params(),
            "variational parameter count mismatch"
        );
        let mut pos = 0;
        for f in self.factors_mut() {
            let n = f.mean.data().len();
            f.mean.data_mut().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
            f.log_std.data_mut().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
    }

    /// Differential entropy of the Gaussian on the unconstrained
    /// coordinates: sum of 1/2 ln(2 pi e) + log-stddev per scalar.
    pub fn entropy_unconstrained(&self) -> f64 {
        let half_ln_2pe = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        self.factors()
            .iter()
            .map(|f| f.len() as f64 * half_ln_2pe + f.log_std.data().iter().sum::<f64>())
            .sum()
    }

    /// Entropy of the pushed-forward posterior on the natural scale: each
    /// log-normal factor adds its log-coordinate mean on top of the
    /// Gaussian closed form.
    pub fn entropy(&self) -> f64 {
        self.entropy_unconstrained()
            + self
                .positive_factors()
                .iter()
                .map(|f| f.mean.data().iter().sum::<f64>())
                .sum::<f64>()
    }

    fn positive_factors(&self) -> Vec<&Factor> {
        let mut fs: Vec<&Factor> = Vec::new();
        fs.push(&self.log_sigma_sq);
        fs.extend(self.enc_weight_scales.iter());
        fs.extend(self.enc_bias_scales.iter());
        fs.extend(self.dec_weight_scales.iter());
        fs.extend(self.dec_bias_scales.iter());
        fs.push(&self.zeta_scale);
        fs.push(&self.gamma_shape);
        fs.push(&self.lambda_rec);
        fs.push(&self.lambda_lin);
        fs
    }

    /// One draw on the natural scale. Consumes normal variates in canonical
    /// factor order so that tape-based sampling can reproduce it.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> PosteriorDraw {
        let l_enc = self.enc_weights.len();
        let l_dec = self.dec_weights.len();
        let mut enc_w = Vec::with_capacity(l_enc);
        let mut enc_b = Vec::with_capacity(l_enc);
        for l in 0..l_enc {
            enc_w.push(self.enc_weights[l].sample(rng));
            enc_b.push(self.enc_biases[l].sample(rng));
        }
        let mut dec_w = Vec::with_capacity(l_dec);
        let mut dec_b = Vec::with_capacity(l_dec);
        for l in 0..l_dec {
            dec_w.push(self.dec_weights[l].sample(rng));
            dec_b.push(self.dec_biases[l].sample(rng));
        }
        let zeta = self.zeta.sample(rng);
        let log_sigma_sq = self.log_sigma_sq.sample(rng);

        let scalar = |f: &Factor, rng: &mut ChaCha8Rng| f.sample(rng).get(0, 0).exp();
        let mut enc_w_s = Vec::with_capacity(l_enc);
        let mut enc_b_s = Vec::with_capacity(l_enc);
        for l in 0..l_enc {
            enc_w_s.push(scalar(&self.enc_weight_scales[l], rng));
            enc_b_s.push(scalar(&self.enc_bias_scales[l], rng));
        }
        let mut dec_w_s = Vec::with_capacity(l_dec);
        let mut dec_b_s = Vec::with_capacity(l_dec);
        for l in 0..l_dec {
            dec_w_s.push(scalar(&self.dec_weight_scales[l], rng));
            dec_b_s.push(scalar(&self.dec_bias_scales[l], rng));
        }
        let zeta_scale = scalar(&self.zeta_scale, rng);
        let gamma_shape = scalar(&self.gamma_shape, rng);
        let lambda_rec: Vec<f64> = self
            .lambda_rec
            .sample(rng)
            .data()
            .iter()
            .map(|u| u.exp())
            .collect();
        let lambda_lin: Vec<f64> = self
            .lambda_lin
            .sample(rng)
            .data()
            .iter()
            .map(|u| u.exp())
            .collect();

        let mut flat = Vec::with_capacity(self.template.num_params());
        for l in 0..l_enc {
            flat.extend_from_slice(enc_w[l].data());
            flat.extend_from_slice(enc_b[l].data());
        }
        for l in 0..l_dec {
            flat.extend_from_slice(dec_w[l].data());
            flat.extend_from_slice(dec_b[l].data());
        }
        flat.extend(log_sigma_sq.data().iter().map(|u| (0.5 * u).exp()));
        flat.extend_from_slice(zeta.data());
        let mut model = self.template.clone();
        model.set_params(&flat);

        PosteriorDraw {
            model,
            noise: LikelihoodSpec {
                lambda_rec,
                lambda_lin,
            },
            enc_weight_scales: enc_w_s,
            enc_bias_scales: enc_b_s,
            dec_weight_scales: dec_w_s,
            dec_bias_scales: dec_b_s,
            zeta_scale,
            gamma_shape,
        }
    }
}

/// i.i.d. draws, reproducible under the seed.
pub fn sample_posterior(
    q: &VariationalPosterior,
    n: usize,
    seed: u64,
) -> Vec<PosteriorDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| q.sample(&mut rng)).collect()
}

pub const POSTERIOR_FORMAT_VERSION: u32 = 1;

/// Serialized posterior: the template model checkpoint extended with the
/// per-group (mean, log-stddev) factor arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorCheckpoint {
    pub format_version: u32,
    pub template: ModelCheckpoint,
    pub enc_weights: Vec<Factor>,
    pub enc_biases: Vec<Factor>,
    pub dec_weights: Vec<Factor>,
    pub dec_biases: Vec<Factor>,
    pub zeta: Factor,
    pub log_sigma_sq: Factor,
    pub enc_weight_scales: Vec<Factor>,
    pub enc_bias_scales: Vec<Factor>,
    pub dec_weight_scales: Vec<Factor>,
    pub dec_bias_scales: Vec<Factor>,
    pub zeta_scale: Factor,
    pub gamma_shape: Factor,
    pub lambda_rec: Factor,
    pub lambda_lin: Factor,
}

impl PosteriorCheckpoint {
    pub fn from_posterior(q: &VariationalPosterior) -> PosteriorCheckpoint {
        PosteriorCheckpoint {
            format_version: POSTERIOR_FORMAT_VERSION,
            template: ModelCheckpoint::from_model(&q.template),
            enc_weights: q.enc_weights.clone(),
            enc_biases: q.enc_biases.clone(),
            dec_weights: q.dec_weights.clone(),
            dec_biases: q.dec_biases.clone(),
            zeta: q.zeta.clone(),
            log_sigma_sq: q.log_sigma_sq.clone(),
            enc_weight_scales: q.enc_weight_scales.clone(),
            enc_bias_scales: q.enc_bias_scales.clone(),
            dec_weight_scales: q.dec_weight_scales.clone(),
            dec_bias_scales: q.dec_bias_scales.clone(),
            zeta_scale: q.zeta_scale.clone(),
            gamma_shape: q.gamma_shape.clone(),
            lambda_rec: q.lambda_rec.clone(),
            lambda_lin: q.lambda_lin.clone(),
        }
    }

    pub fn into_posterior(self) -> Result<VariationalPosterior> {
        if self.format_version != POSTERIOR_FORMAT_VERSION {
            return Err(CoreError::Format(format!(
                "unsupported posterior format version {}",
                self.format_version
            )));
        }
        let template = self.template.into_model()?;
        let q = VariationalPosterior {
            template,
            enc_weights: self.enc_weights,
            enc_biases: self.enc_biases,
            dec_weights: self.dec_weights,
            dec_biases: self.dec_biases,
            zeta: self.zeta,
            log_sigma_sq: self.log_sigma_sq,
            enc_weight_scales: self.enc_weight_scales,
            enc_bias_scales: self.enc_bias_scales,
            dec_weight_scales: self.dec_weight_scales,
            dec_bias_scales: self.dec_bias_scales,
            zeta_scale: self.zeta_scale,
            gamma_shape: self.gamma_shape,
            lambda_rec: self.lambda_rec,
            lambda_lin: self.lambda_lin,
        };
        let reference = VariationalPosterior::from_model(&q.template);
        for (a, b) in q.factors().iter().zip(reference.factors()) {
            if a.mean.shape() != b.mean.shape() || a.log_std.shape() != b.log_std.shape() {
                return Err(CoreError::Format(
                    "posterior factor shapes do not match the template model".into(),
                ));
            }
            if a.mean
                .data()
                .iter()
                .chain(a.log_std.data())
                .any(|v| !v.is_finite())
            {
                return Err(CoreError::Format(
                    "posterior factors must be finite".into(),
                ));
            }
        }
        Ok(q)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("posterior serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<PosteriorCheckpoint> {
        serde_json::from_str(s).map_err(|e| CoreError::Format(format!("posterior json: {e}")))
    }
}

pub fn save_posterior(path: &std::path::Path, q: &VariationalPosterior) -> Result<()> {
    std::fs::write(path, PosteriorCheckpoint::from_posterior(q).to_json())?;
    Ok(())
}

pub fn load_posterior(path: &std::path::Path) -> Result<VariationalPosterior> {
    let text = std::fs::read_to_string(path)?;
    PosteriorCheckpoint::from_json(&text)?.into_posterior()
}
