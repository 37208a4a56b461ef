//! Stable-by-construction Koopman generator.
//!
//! K is tridiagonal with diagonal -sigma_i^2, superdiagonal zeta_i and
//! subdiagonal -zeta_i. For any v, v^T K v = -sum sigma_i^2 v_i^2 <= 0 (the
//! coupling part is antisymmetric), so every eigenvalue has non-positive
//! real part, unconditionally in the 2D-1 free parameters.

use crate::error::{CoreError, Result};
use crate::linalg::{eigenvalues, ComplexSpectrum, Matrix, SpectralPart};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StableKoopman {
    sigma: Vec<f64>,
    zeta: Vec<f64>,
}

impl StableKoopman {
    pub fn new(sigma: Vec<f64>, zeta: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() {
            return Err(CoreError::Domain("latent dimension must be >= 1".into()));
        }
        if zeta.len() + 1 != sigma.len() {
            return Err(CoreError::DimensionMismatch(format!(
                "sigma has {} entries, zeta must have {} (got {})",
                sigma.len(),
                sigma.len() - 1,
                zeta.len()
            )));
        }
        if sigma.iter().chain(&zeta).any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("stable operator parameters".into()));
        }
        Ok(StableKoopman { sigma, zeta })
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    pub fn sigma_mut(&mut self) -> &mut [f64] {
        &mut self.sigma
    }

    pub fn zeta_mut(&mut self) -> &mut [f64] {
        &mut self.zeta
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim() - 1
    }

    /// The assembled D x D generator.
    pub fn matrix(&self) -> Matrix {
        let d = self.dim();
        let mut k = Matrix::zeros(d, d);
        for i in 0..d {
            k.set(i, i, -self.sigma[i] * self.sigma[i]);
        }
        for i in 0..d - 1 {
            k.set(i, i + 1, self.zeta[i]);
            k.set(i + 1, i, -self.zeta[i]);
        }
        k
    }

    pub fn spectrum(&self) -> Result<ComplexSpectrum> {
        eigenvalues(&self.matrix())
    }

    /// Realize a target spectrum: each complex pair r +- i m becomes a 2 x 2
    /// block with sigma^2 = -r and zeta = m, each real eigenvalue a 1 x 1
    /// block, with zero coupling between blocks.
    pub fn from_spectrum(target: &ComplexSpectrum) -> Result<Self> {
        let parts = target.parts()?;
        let d = target.len();
        let mut sigma = vec![0.0; d];
        let mut zeta = vec![0.0; d.saturating_sub(1)];
        let mut i = 0;
        for part in parts {
            match part {
                SpectralPart::Real(r) => {
                    if r > 0.0 {
                        return Err(CoreError::UnstableSpectrum(format!(
                            "target eigenvalue {r} has positive real part"
                        )));
                    }
                    sigma[i] = (-r).sqrt();
                    i += 1;
                }
                SpectralPart::Pair { re, im } => {
                    if re > 0.0 {
                        return Err(CoreError::UnstableSpectrum(format!(
                            "target eigenvalue {re}+-{im}i has positive real part"
                        )));
                    }
                    sigma[i] = (-re).sqrt();
                    sigma[i + 1] = (-re).sqrt();
                    zeta[i] = im;
                    i += 2;
                }
            }
        }
        debug_assert_eq!(i, d);
        StableKoopman::new(sigma, zeta)
    }
}
