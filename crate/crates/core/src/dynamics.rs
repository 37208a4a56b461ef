//! Benchmark systems, ODE integration, phase-space sampling, POD and
//! noise injection for building training datasets.

use crate::data::{DiffDataset, TrajDataset, Trajectory};
use crate::error::{CoreError, Result};
use crate::linalg::{thin_svd, Matrix};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Angular frequency of the synthetic limit-cycle surrogate.
pub const SURROGATE_OMEGA: f64 = 1.0556;

/// The built-in benchmark vector fields.
#[derive(Clone, Copy, Debug)]
pub enum System {
    /// x1dot = mu x1, x2dot = lambda (x2 - x1^2): a fixed-point attractor
    /// with an exactly known Koopman triple.
    FixedPoint { mu: f64, lambda: f64 },
    /// Unforced Duffing oscillator x1dot = x2,
    /// x2dot = -delta x2 - x1 (beta + alpha x1^2).
    Duffing { delta: f64, beta: f64, alpha: f64 },
    /// Stable limit cycle in Cartesian coordinates:
    /// rdot = gamma r (1 - r^2), thetadot = omega.
    LimitCycle { gamma: f64, omega: f64 },
}

impl System {
    /// The fixed-point benchmark at its standard parameters.
    pub fn fixed_point() -> System {
        System::FixedPoint {
            mu: -0.05,
            lambda: -1.0,
        }
    }

    /// The Duffing benchmark at its standard parameters (two stable foci).
    pub fn duffing() -> System {
        System::Duffing {
            delta: 0.5,
            beta: -1.0,
            alpha: 1.0,
        }
    }

    /// The oscillator behind the high-dimensional surrogate.
    pub fn limit_cycle() -> System {
        System::LimitCycle {
            gamma: 1.0,
            omega: SURROGATE_OMEGA,
        }
    }

    pub fn dim(&self) -> usize {
        2
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::FixedPoint { .. } => "fixed-point",
            System::Duffing { .. } => "duffing",
            System::LimitCycle { .. } => "limit-cycle",
        }
    }

    pub fn vector_field(&self, x: &[f64], xdot: &mut [f64]) {
        match *self {
            System::FixedPoint { mu, lambda } => {
                xdot[0] = mu * x[0];
                xdot[1] = lambda * (x[1] - x[0] * x[0]);
            }
            System::Duffing { delta, beta, alpha } => {
                xdot[0] = x[1];
                xdot[1] = -delta * x[1] - x[0] * (beta + alpha * x[0] * x[0]);
            }
            System::LimitCycle { gamma, omega } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                xdot[0] = gamma * x[0] * (1.0 - r2) - omega * x[1];
                xdot[1] = gamma * x[1] * (1.0 - r2) + omega * x[0];
            }
        }
    }
}

/// Classical fixed-step fourth-order Runge-Kutta for an arbitrary vector
/// field; returns steps+1 rows including the initial state.
pub fn integrate_rk4_fn(
    f: impl Fn(&[f64], &mut [f64]),
    x0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Matrix> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(CoreError::Domain(format!("step size must be positive, got {dt}")));
    }
    let n = x0.len();
    let mut out = Matrix::zeros(steps + 1, n);
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    for step in 0..=steps {
        for j in 0..n {
            out.set(step, j, x[j]);
        }
        if step == steps {
            break;
        }
        f(&x, &mut k1);
        for j in 0..n {
            stage[j] = x[j] + 0.5 * dt * k1[j];
        }
        f(&stage, &mut k2);
        for j in 0..n {
            stage[j] = x[j] + 0.5 * dt * k2[j];
        }
        f(&stage, &mut k3);
        for j in 0..n {
            stage[j] = x[j] + dt * k3[j];
        }
        f(&stage, &mut k4);
        for j in 0..n {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Diverged {
                epoch: step + 1,
                context: "state blew up during integration".into(),
            });
        }
    }
    Ok(out)
}

pub fn integrate_rk4(system: &System, x0: &[f64], dt: f64, steps: usize) -> Result<Matrix> {
    integrate_rk4_fn(|x, xdot| system.vector_field(x, xdot), x0, dt, steps)
}

/// Trajectory sampled at `dt_out` intervals, integrated internally at a
/// tenth of the output interval for accuracy.
pub fn sample_trajectory(
    system: &System,
    x0: &[f64],
    dt_out: f64,
    steps_out: usize,
) -> Result<Trajectory> {
    const SUBSTEPS: usize = 10;
    let fine = integrate_rk4(system, x0, dt_out / SUBSTEPS as f64, steps_out * SUBSTEPS)?;
    let n = x0.len();
    let states = Matrix::from_fn(steps_out + 1, n, |i, j| fine.get(i * SUBSTEPS, j));
    let times: Vec<f64> = (0..=steps_out).map(|i| i as f64 * dt_out).collect();
    Trajectory::new(times, states)
}

/// Latin hypercube sample: one point per axis stratum in every dimension,
/// uniform jitter within strata, independent stratum permutations.
pub fn lhs_sample(bounds: &[(f64, f64)], n: usize, rng: &mut impl Rng) -> Result<Matrix> {
    if n == 0 {
        return Err(CoreError::Domain("sample count must be positive".into()));
    }
    for &(lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CoreError::Domain(format!("bad bounds ({lo}, {hi})")));
        }
    }
    let d = bounds.len();
    let mut out = Matrix::zeros(n, d);
    for j in 0..d {
        let (lo, hi) = bounds[j];
        let width = (hi - lo) / n as f64;
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for i in 0..n {
            let u: f64 = rng.random();
            out.set(i, j, lo + (strata[i] as f64 + u) * width);
        }
    }
    Ok(out)
}

/// Pair every sampled state with its exact vector-field evaluation.
pub fn make_diff_dataset(system: &System, points: &Matrix) -> Result<DiffDataset> {
    let n = system.dim();
    if points.cols() != n {
        return Err(CoreError::DimensionMismatch(format!(
            "points have width {}, system is {n}-dimensional",
            points.cols()
        )));
    }
    let mut derivs = Matrix::zeros(points.rows(), n);
    let mut xdot = vec![0.0; n];
    for i in 0..points.rows() {
        system.vector_field(points.row(i), &mut xdot);
        for j in 0..n {
            derivs.set(i, j, xdot[j]);
        }
    }
    DiffDataset::new(points.clone(), derivs)
}

/// The fixed-point system's exact Koopman triple: eigenvalues {mu, lambda}
/// with eigenfunctions x1 and x2 - lambda x1^2 / (lambda - 2 mu).
pub struct FixedPointReference {
    mu: f64,
    lambda: f64,
}

impl FixedPointReference {
    pub fn new(mu: f64, lambda: f64) -> Result<Self> {
        if lambda == 2.0 * mu {
            return Err(CoreError::Domain(
                "resonant parameters lambda = 2 mu have no quadratic eigenfunction".into(),
            ));
        }
        Ok(FixedPointReference { mu, lambda })
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        [self.mu, self.lambda]
    }

    /// Eigenfunction with eigenvalue mu.
    pub fn phi_linear(&self, x: &[f64]) -> f64 {
        x[0]
    }

    /// Eigenfunction with eigenvalue lambda.
    pub fn phi_quadratic(&self, x: &[f64]) -> f64 {
        x[1] - self.lambda / (self.lambda - 2.0 * self.mu) * x[0] * x[0]
    }
}

/// Energy-ranked orthonormal basis of centered snapshots.
#[derive(Clone, Debug)]
pub struct PodBasis {
    pub mean: Vec<f64>,
    /// N_full x r, orthonormal columns.
    pub modes: Matrix,
    /// All min(M, N_full) singular values, descending.
    pub singular_values: Vec<f64>,
    /// Fraction of squared singular value mass captured by the r modes.
    pub energy_ratio: f64,
}

/// Center the snapshots, compute the thin SVD and keep the leading r right
/// singular vectors; coefficients are the centered snapshots projected onto
/// them.
pub fn pod_project(snapshots: &Matrix, r: usize) -> Result<(PodBasis, Matrix)> {
    let m = snapshots.rows();
    let n = snapshots.cols();
    if r == 0 || r > m.min(n) {
        return Err(CoreError::DimensionMismatch(format!(
            "rank {r} not in 1..={} for {m} x {n} snapshots",
            m.min(n)
        )));
    }
    let mut mean = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            mean[j] += snapshots.get(i, j);
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let centered = Matrix::from_fn(m, n, |i, j| snapshots.get(i, j) - mean[j]);
    let svd = thin_svd(&centered)?;
    let modes = Matrix::from_fn(n, r, |i, j| svd.v.get(i, j));
    let total: f64 = svd.s.iter().map(|s| s * s).sum();
    let kept: f64 = svd.s[..r].iter().map(|s| s * s).sum();
    let energy_ratio = if total > 0.0 { kept / total } else { 1.0 };
    let coeffs = centered.matmul(&modes);
    Ok((
        PodBasis {
            mean,
            modes,
            singular_values: svd.s,
            energy_ratio,
        },
        coeffs,
    ))
}

impl PodBasis {
    pub fn rank(&self) -> usize {
        self.modes.cols()
    }

    /// Lift coefficients back to full space and restore the mean.
    pub fn reconstruct(&self, coeffs: &Matrix) -> Matrix {
        let lifted = coeffs.matmul(&self.modes.transpose());
        Matrix::from_fn(lifted.rows(), lifted.cols(), |i, j| {
            lifted.get(i, j) + self.mean[j]
        })
    }
}

/// Add independent Gaussian noise to each column, with stddev equal to
/// `ratio` times that column's uncorrected standard deviation.
pub fn add_noise(series: &Matrix, ratio: f64, rng: &mut impl Rng) -> Result<Matrix> {
    if ratio < 0.0 || !ratio.is_finite() {
        return Err(CoreError::Domain(format!(
            "noise ratio must be nonnegative, got {ratio}"
        )));
    }
    if ratio == 0.0 {
        return Ok(series.clone());
    }
    let m = series.rows();
    let n = series.cols();
    let mut std = vec![0.0; n];
    for j in 0..n {
        let mean: f64 = (0..m).map(|i| series.get(i, j)).sum::<f64>() / m as f64;
        let var: f64 = (0..m).map(|i| (series.get(i, j) - mean).powi(2)).sum::<f64>() / m as f64;
        std[j] = var.sqrt();
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut out = series.clone();
    for i in 0..m {
        for j in 0..n {
            let v = out.get(i, j) + ratio * std[j] * normal.sample(rng);
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// High-dimensional stand-in for flow-snapshot data: a 2-D stable limit
/// cycle lifted into n_full dimensions through a fixed seeded random linear
/// map. The trajectory starts on the cycle, so the data is periodic with
/// angular frequency `SURROGATE_OMEGA`.
pub fn limit_cycle_surrogate(
    n_full: usize,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<TrajDataset> {
    if n_full < 2 {
        return Err(CoreError::Domain("surrogate needs at least 2 dimensions".into()));
    }
    let system = System::limit_cycle();
    let planar = sample_trajectory(&system, &[1.0, 0.0], dt, steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let lift = Matrix::from_fn(2, n_full, |_, _| normal.sample(&mut rng));
    let states = planar.states.matmul(&lift);
    Ok(TrajDataset {
        trajectories: vec![Trajectory::new(planar.times, states)?],
    })
}
