//! Affine state normalization z = (x - mean) / scale.

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizationMode {
    /// Per-component uncorrected standard deviation.
    #[serde(rename = "per-component")]
    PerComponent,
    /// One shared scale, the largest per-component deviation; preserves the
    /// ratio of component magnitudes.
    #[serde(rename = "global-max")]
    GlobalMax,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Normalizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
    mode: NormalizationMode,
}

impl Normalizer {
    /// No-op transform (mean 0, scale 1), used when data is already in
    /// model coordinates.
    pub fn identity(n: usize) -> Self {
        Normalizer {
            mean: vec![0.0; n],
            scale: vec![1.0; n],
            mode: NormalizationMode::PerComponent,
        }
    }

    /// Column means and uncorrected standard deviations of a snapshot
    /// matrix.
    pub fn fit(x: &Matrix, mode: NormalizationMode) -> Result<Self> {
        let m = x.rows();
        let n = x.cols();
        if m < 2 {
            return Err(CoreError::Data(format!(
                "normalizer needs at least 2 snapshots, got {m}"
            )));
        }
        let mut mean = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                mean[j] += x.get(i, j);
            }
        }
        for mj in &mut mean {
            *mj /= m as f64;
        }
        let mut dev = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                let r = x.get(i, j) - mean[j];
                dev[j] += r * r;
            }
        }
        for dj in &mut dev {
            *dj = (*dj / m as f64).sqrt();
        }
        let scale = match mode {
            NormalizationMode::PerComponent => {
                for (j, dj) in dev.iter().enumerate() {
                    if *dj <= 1e-12 * (1.0 + mean[j].abs()) {
                        return Err(CoreError::DegenerateScale(format!(
                            "column {j} has (near-)zero variance; consider global-max mode"
                        )));
                    }
                }
                dev
            }
            NormalizationMode::GlobalMax => {
                let dmax = dev.iter().cloned().fold(0.0, f64::max);
                let mean_mag = mean.iter().map(|v| v.abs()).fold(0.0, f64::max);
                if dmax <= 1e-12 * (1.0 + mean_mag) {
                    return Err(CoreError::DegenerateScale(
                        "all columns have (near-)zero variance".into(),
                    ));
                }
                vec![dmax; n]
            }
        };
        Ok(Normalizer { mean, scale, mode })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    pub fn normalize(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.cols(), self.dim(), "normalizer width mismatch");
        Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            (x.get(i, j) - self.mean[j]) / self.scale[j]
        })
    }

    pub fn denormalize(&self, z: &Matrix) -> Matrix {
        assert_eq!(z.cols(), self.dim(), "normalizer width mismatch");
        Matrix::from_fn(z.rows(), z.cols(), |i, j| {
            z.get(i, j) * self.scale[j] + self.mean[j]
        })
    }

    /// Derivatives transform without the mean shift: zdot = xdot / scale.
    pub fn normalize_derivative(&self, xdot: &Matrix) -> Matrix {
        assert_eq!(xdot.cols(), self.dim(), "normalizer width mismatch");
        Matrix::from_fn(xdot.rows(), xdot.cols(), |i, j| {
            xdot.get(i, j) / self.scale[j]
        })
    }
}
