//! Forecasts with uncertainty: deterministic rollouts of a fitted model and
//! Monte Carlo ensembles over a variational posterior.
//!
//! The derivative-form generative model treats the latent state as an
//! Ornstein-Uhlenbeck process forced by the consistency noise, so its
//! ensemble samples latent paths step by step with the exact transition
//! covariance. The window-form model is deterministic in the latent space
//! and only carries observation noise.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::linalg::{cholesky, matexp, ou_covariance, Matrix};
use crate::model::KoopmanModel;
use crate::vi::{sample_posterior, VariationalPosterior};

#[derive(Debug, Clone, Copy)]
pub struct PredictConfig {
    /// Posterior draws in the outer Monte Carlo loop.
    pub posterior_draws: usize,
    /// Noise paths sampled per posterior draw.
    pub noise_draws: usize,
    /// Add reconstruction noise to the decoded snapshots.
    pub observation_noise: bool,
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            posterior_draws: 100,
            noise_draws: 10,
            observation_noise: false,
            seed: 0,
        }
    }
}

/// Raw-coordinate forecast ensemble; every trajectory is a T x N matrix
/// over the shared time grid.
#[derive(Debug, Clone)]
pub struct PredictiveEnsemble {
    pub times: Vec<f64>,
    pub trajectories: Vec<Matrix>,
}

/// Pointwise moments of an ensemble.
#[derive(Debug, Clone)]
pub struct PredictiveSummary {
    pub times: Vec<f64>,
    pub mean: Matrix,
    pub std: Matrix,
}

impl PredictiveEnsemble {
    /// Per-time, per-component mean and population standard deviation.
    pub fn summarize(&self) -> PredictiveSummary {
        assert!(!self.trajectories.is_empty(), "empty ensemble");
        let t = self.trajectories[0].rows();
        let n = self.trajectories[0].cols();
        let m = self.trajectories.len() as f64;
        let mut mean = Matrix::zeros(t, n);
        for traj in &self.trajectories {
            mean.add_assign(traj);
        }
        let mean = mean.scale(1.0 / m);
        let mut var = Matrix::zeros(t, n);
        for traj in &self.trajectories {
            let d = traj.sub(&mean);
            for i in 0..t {
                for j in 0..n {
                    let v = var.get(i, j) + d.get(i, j) * d.get(i, j);
                    var.set(i, j, v);
                }
            }
        }
        let std = Matrix::from_fn(t, n, |i, j| (var.get(i, j) / m).sqrt());
        PredictiveSummary {
            times: self.times.clone(),
            mean,
            std,
        }
    }
}

fn validate_inputs(model: &KoopmanModel, z0: &[f64], times: &[f64]) -> Result<()> {
    if z0.len() != model.state_dim() {
        return Err(CoreError::DimensionMismatch(format!(
            "initial state has {} components, model expects {}",
            z0.len(),
            model.state_dim()
        )));
    }
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("initial state".into()));
    }
    if times.is_empty() {
        return Err(CoreError::Data("no prediction times".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(CoreError::NonFinite("prediction times".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoreError::Domain(
            "prediction times must be non-decreasing".into(),
        ));
    }
    Ok(())
}

/// Per-step matrix exponentials, shared across equal spacings so uniform
/// grids pay for a single factorization.
struct PropagatorCache {
    k: Matrix,
    entries: Vec<(f64, Matrix)>,
}

impl PropagatorCache {
    fn new(k: Matrix) -> Self {
        PropagatorCache {
            k,
            entries: Vec::new(),
        }
    }

    fn get(&mut self, dt: f64) -> Result<Matrix> {
        if let Some((_, e)) = self
            .entries
            .iter()
            .find(|(d, _)| (d - dt).abs() <= 1e-12 * d.abs().max(dt.abs()))
        {
            return Ok(e.clone());
        }
        let e = matexp(&self.k.scale(dt))?;
        self.entries.push((dt, e.clone()));
        Ok(e)
    }
}

/// Latent rollout phi_0 e^{(t_j - t_0) K} chained step by step.
fn latent_rollout(model: &KoopmanModel, z0_norm: &Matrix, times: &[f64]) -> Result<Matrix> {
    let d = model.latent_dim();
    let mut cache = PropagatorCache::new(model.k_matrix());
    let mut phi = model.encode(z0_norm);
    let mut lat = Matrix::zeros(times.len(), d);
    for j in 0..times.len() {
        if j > 0 {
            let e = cache.get(times[j] - times[j - 1])?;
            phi = phi.matmul(&e);
        }
        for c in 0..d {
            lat.set(j, c, phi.get(0, c));
        }
    }
    Ok(lat)
}

/// Deterministic forecast of the fitted model from a raw initial state.
pub fn predict_map(model: &KoopmanModel, z0: &[f64], times: &[f64]) -> Result<Matrix> {
    validate_inputs(model, z0, times)?;
    let norm = model.normalizer();
    let z0n = norm.normalize(&Matrix::from_vec(1, z0.len(), z0.to_vec()));
    let lat = latent_rollout(model, &z0n, times)?;
    Ok(norm.denormalize(&model.decode(&lat)))
}

fn gaussian_row(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    Matrix::from_vec(1, d, (0..d).map(|_| rng.sample(StandardNormal)).collect())
}

fn add_observation_noise(dec: &mut Matrix, lambda_rec: &[f64], rng: &mut ChaCha8Rng) {
    for i in 0..dec.rows() {
        for (j, &l) in lambda_rec.iter().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            let v = dec.get(i, j) + l.sqrt() * eps;
            dec.set(i, j, v);
        }
    }
}

/// Posterior forecast under the window-form model: each draw rolls the
/// latent state deterministically; observation noise optionally dresses the
/// decoded snapshots with `noise_draws` replicates.
pub fn predict_posterior_recurrent(
    q: &VariationalPosterior,
    z0: &[f64],
    times: &[f64],
    config: &PredictConfig,
) -> Result<PredictiveEnsemble> {
    validate_inputs(q.template(), z0, times)?;
    let draws = sample_posterior(q, config.posterior_draws.max(1), config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let noise_draws = config.noise_draws.max(1);

    let mut trajectories = Vec::new();
    for draw in &draws {
        let model = &draw.model;
        let norm = model.normalizer();
        let z0n = norm.normalize(&Matrix::from_vec(1, z0.len(), z0.to_vec()));
        let lat = latent_rollout(model, &z0n, times)?;
        let dec = model.decode(&lat);
        if config.observation_noise {
            for _ in 0..noise_draws {
                let mut noisy = dec.clone();
                add_observation_noise(&mut noisy, &draw.noise.lambda_rec, &mut rng);
                trajectories.push(norm.denormalize(&noisy));
            }
        } else {
            trajectories.push(norm.denormalize(&dec));
        }
    }
    Ok(PredictiveEnsemble {
        times: times.to_vec(),
        trajectories,
    })
}

/// Per-step transition for the latent Ornstein-Uhlenbeck process: the
/// deterministic propagator e^{dt K} and a Cholesky factor of the step
/// noise covariance, cached per distinct spacing.
struct OuStepCache {
    k: Matrix,
    a: Matrix,
    lambda: Vec<f64>,
    entries: Vec<(f64, Matrix, Matrix)>,
}

impl OuStepCache {
    fn new(k: Matrix, lambda: Vec<f64>) -> Self {
        let a = k.transpose();
        OuStepCache {
            k,
            a,
            lambda,
            entries: Vec::new(),
        }
    }

    fn get(&mut self, dt: f64) -> Result<(Matrix, Matrix)> {
        if let Some((_, e, l)) = self
            .entries
            .iter()
            .find(|(d, _, _)| (d - dt).abs() <= 1e-12 * d.abs().max(dt.abs()))
        {
            return Ok((e.clone(), l.clone()));
        }
        let e = matexp(&self.k.scale(dt))?;
        // row-vector latents phi obey phi_{j+1} = phi_j E + w; the column
        // covariance of w uses the transposed generator
        let s = ou_covariance(&self.a, &self.lambda, dt)?;
        let l = chol_with_jitter(&s)?;
        self.entries.push((dt, e.clone(), l.clone()));
        Ok((e, l))
    }
}

/// Cholesky with an escalating diagonal bump for nearly semidefinite
/// covariances (tiny spacings drive the step covariance to zero).
fn chol_with_jitter(sigma: &Matrix) -> Result<Matrix> {
    if sigma.norm_max() == 0.0 {
        return Ok(Matrix::zeros(sigma.rows(), sigma.cols()));
    }
    if let Ok(l) = cholesky(sigma) {
        return Ok(l);
    }
    let d = sigma.rows();
    let scale = (0..d)
        .map(|i| sigma.get(i, i))
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut jitter = 1e-12 * scale;
    while jitter <= 1e-6 * scale {
        let mut bumped = sigma.clone();
        for i in 0..d {
            let v = bumped.get(i, i) + jitter;
            bumped.set(i, i, v);
        }
        if let Ok(l) = cholesky(&bumped) {
            return Ok(l);
        }
        jitter *= 10.0;
    }
    Err(CoreError::Domain(
        "step covariance is not positive semidefinite within the jitter budget".into(),
    ))
}

/// Posterior forecast under the derivative-form model: each draw samples
/// `noise_draws` latent Ornstein-Uhlenbeck paths exactly at the grid times,
/// decodes them, and optionally adds observation noise.
pub fn predict_posterior_diff(
    q: &VariationalPosterior,
    z0: &[f64],
    times: &[f64],
    config: &PredictConfig,
) -> Result<PredictiveEnsemble> {
    validate_inputs(q.template(), z0, times)?;
    let draws = sample_posterior(q, config.posterior_draws.max(1), config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let noise_draws = config.noise_draws.max(1);
    let t = times.len();

    let mut trajectories = Vec::new();
    for draw in &draws {
        let model = &draw.model;
        let d = model.latent_dim();
        let norm = model.normalizer();
        let z0n = norm.normalize(&Matrix::from_vec(1, z0.len(), z0.to_vec()));
        let phi0 = model.encode(&z0n);
        let mut cache = OuStepCache::new(model.k_matrix(), draw.noise.lambda_lin.clone());

        for _ in 0..noise_draws {
            let mut lat = Matrix::zeros(t, d);
            let mut phi = phi0.clone();
            for j in 0..t {
                if j > 0 {
                    let (e, l) = cache.get(times[j] - times[j - 1])?;
                    phi = phi.matmul(&e);
                    if l.norm_max() > 0.0 {
                        let g = gaussian_row(&mut rng, d);
                        phi = phi.add(&g.matmul(&l.transpose()));
                    }
                }
                for c in 0..d {
                    lat.set(j, c, phi.get(0, c));
                }
            }
            let mut dec = model.decode(&lat);
            if config.observation_noise {
                add_observation_noise(&mut dec, &draw.noise.lambda_rec, &mut rng);
            }
            trajectories.push(norm.denormalize(&dec));
        }
    }
    Ok(PredictiveEnsemble {
        times: times.to_vec(),
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::FeedForwardNet;
    use crate::model::{Normalizer, StableKoopman};

    fn exact_linear_model(sigma: [f64; 2], zeta: f64) -> KoopmanModel {
        KoopmanModel::new(
            FeedForwardNet::new(&[2, 3, 2]),
            FeedForwardNet::new(&[2, 3, 2]),
            Matrix::identity(2),
            StableKoopman::new(sigma.to_vec(), vec![zeta]).unwrap(),
            Normalizer::identity(2),
        )
        .unwrap()
    }

    /// All variational stddevs driven to zero: draws coincide with the
    /// means and the hyperparameters sit at their log-mean values.
    fn degenerate_posterior(model: &KoopmanModel) -> VariationalPosterior {
        let mut q = VariationalPosterior::from_model(model);
        for f in q.factors_mut() {
            let (r, c) = f.log_std.shape();
            f.log_std = Matrix::from_vec(r, c, vec![-30.0; r * c]);
        }
        q
    }

    #[test]
    fn map_prediction_matches_the_closed_form() {
        let model = exact_linear_model([0.9, 0.6], 0.5);
        let z0 = [1.0, -0.4];
        let times = [0.0, 0.3, 0.7, 1.2];
        let got = predict_map(&model, &z0, &times).unwrap();
        let k = model.k_matrix();
        for (j, &tj) in times.iter().enumerate() {
            let e = matexp(&k.scale(tj)).unwrap();
            let want = Matrix::from_vec(1, 2, z0.to_vec()).matmul(&e);
            for c in 0..2 {
                assert!(
                    (got.get(j, c) - want.get(0, c)).abs() < 1e-12,
                    "t {tj} comp {c}"
                );
            }
        }
    }

    #[test]
    fn prediction_inputs_are_validated() {
        let model = exact_linear_model([0.9, 0.6], 0.2);
        assert!(matches!(
            predict_map(&model, &[1.0], &[0.0, 1.0]).unwrap_err(),
            CoreError::DimensionMismatch(_)
        ));
        assert!(matches!(
            predict_map(&model, &[1.0, 2.0], &[]).unwrap_err(),
            CoreError::Data(_)
        ));
        assert!(matches!(
            predict_map(&model, &[1.0, 2.0], &[0.0, 0.5, 0.2]).unwrap_err(),
            CoreError::Domain(_)
        ));
        assert!(matches!(
            predict_map(&model, &[1.0, f64::NAN], &[0.0]).unwrap_err(),
            CoreError::NonFinite(_)
        ));
    }

    #[test]
    fn degenerate_recurrent_ensemble_collapses_to_the_map_forecast() {
        let model = exact_linear_model([0.8, 0.5], 0.3);
        let q = degenerate_posterior(&model);
        let z0 = [0.7, -0.2];
        let times = [0.0, 0.4, 0.9];
        let config = PredictConfig {
            posterior_draws: 5,
            noise_draws: 3,
            observation_noise: false,
            seed: 1,
        };
        let ens = predict_posterior_recurrent(&q, &z0, &times, &config).unwrap();
        assert_eq!(ens.trajectories.len(), 5);
        let map = predict_map(&model, &z0, &times).unwrap();
        for traj in &ens.trajectories {
            assert!(traj.sub(&map).norm_max() < 1e-9);
        }
    }

    #[test]
    fn observation_noise_variance_matches_the_draw_covariance() {
        let model = exact_linear_model([0.8, 0.5], 0.0);
        let q = degenerate_posterior(&model);
        let times = [0.0, 0.5];
        let config = PredictConfig {
            posterior_draws: 2,
            noise_draws: 1000,
            observation_noise: true,
            seed: 9,
        };
        let ens = predict_posterior_recurrent(&q, &[0.6, 0.1], &times, &config).unwrap();
        assert_eq!(ens.trajectories.len(), 2000);
        let summary = ens.summarize();
        // lambda_rec sits at e^0 = 1 for the degenerate posterior
        for j in 0..times.len() {
            for c in 0..2 {
                let s = summary.std.get(j, c);
                assert!((s - 1.0).abs() < 0.1, "std {s} at ({j}, {c})");
            }
        }
    }

    #[test]
    fn latent_ou_variance_matches_the_analytic_law() {
        // diagonal generator: each component is a scalar OU process with
        // a_i = sigma_i^2 and unit forcing, so
        // Var_i(t) = (1 - e^{-2 a_i t}) / (2 a_i)
        let model = exact_linear_model([0.8, 0.5], 0.0);
        let q = degenerate_posterior(&model);
        let times = [0.0, 1.0];
        let config = PredictConfig {
            posterior_draws: 2,
            noise_draws: 1500,
            observation_noise: false,
            seed: 17,
        };
        let ens = predict_posterior_diff(&q, &[0.6, 0.1], &times, &config).unwrap();
        let summary = ens.summarize();
        let k = model.k_matrix();
        for c in 0..2 {
            let a = -k.get(c, c);
            let want = ((1.0 - (-2.0 * a).exp()) / (2.0 * a)).sqrt();
            let got = summary.std.get(1, c);
            assert!(
                (got - want).abs() / want < 0.1,
                "component {c}: std {got} vs {want}"
            );
            // t = 0 carries only the e^{-30} residual posterior stddev
            assert!(summary.std.get(0, c) < 1e-9);
        }
        // ensemble mean still tracks the deterministic flow
        let map = predict_map(&model, &[0.6, 0.1], &times).unwrap();
        for c in 0..2 {
            let se = summary.std.get(1, c) / (ens.trajectories.len() as f64).sqrt();
            assert!(
                (summary.mean.get(1, c) - map.get(1, c)).abs() < 4.0 * se,
                "mean drifted at component {c}"
            );
        }
    }

    #[test]
    fn ensembles_are_deterministic_under_seed() {
        let model = exact_linear_model([0.7, 0.9], 0.4);
        let mut q = VariationalPosterior::from_model(&model);
        let mut flat = q.flatten();
        for v in flat.iter_mut() {
            *v += 0.1;
        }
        q.set_from_flat(&flat);
        let times = [0.0, 0.2, 0.5];
        let config = PredictConfig {
            posterior_draws: 4,
            noise_draws: 2,
            observation_noise: true,
            seed: 5,
        };
        let a = predict_posterior_diff(&q, &[0.3, 0.4], &times, &config).unwrap();
        let b = predict_posterior_diff(&q, &[0.3, 0.4], &times, &config).unwrap();
        assert_eq!(a.trajectories.len(), b.trajectories.len());
        for (x, y) in a.trajectories.iter().zip(&b.trajectories) {
            assert_eq!(x.sub(y).norm_max(), 0.0);
        }
        let other = PredictConfig { seed: 6, ..config };
        let c = predict_posterior_diff(&q, &[0.3, 0.4], &times, &other).unwrap();
        assert!(a.trajectories[0].sub(&c.trajectories[0]).norm_max() > 0.0);
    }

    #[test]
    fn summarize_hand_check() {
        let ens = PredictiveEnsemble {
            times: vec![0.0, 1.0],
            trajectories: vec![
                Matrix::from_vec(2, 1, vec![1.0, 2.0]),
                Matrix::from_vec(2, 1, vec![3.0, 6.0]),
            ],
        };
        let s = ens.summarize();
        assert_eq!(s.mean.get(0, 0), 2.0);
        assert_eq!(s.mean.get(1, 0), 4.0);
        assert_eq!(s.std.get(0, 0), 1.0);
        assert_eq!(s.std.get(1, 0), 2.0);
    }
}
