//! Tape programs for the two training objectives.
//!
//! Both losses work in normalized coordinates; callers normalize once up
//! front (`DiffBatch::prepare`, `normalize_windows`) so the per-step tape
//! construction only copies the rows it needs.

use crate::autodiff::{Tape, Var};
use crate::data::{DiffDataset, Window};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::{KoopmanModel, ModelVars};

/// Multipliers on the two squared-residual terms; unity by default.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub linear: f64,
    pub reconstruction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            linear: 1.0,
            reconstruction: 1.0,
        }
    }
}

/// Derivative-form batch in normalized coordinates.
#[derive(Debug, Clone)]
pub struct DiffBatch {
    pub states: Matrix,
    pub derivs: Matrix,
}

impl DiffBatch {
    pub fn prepare(model: &KoopmanModel, data: &DiffDataset) -> DiffBatch {
        let norm = model.normalizer();
        DiffBatch {
            states: norm.normalize(&data.states),
            derivs: norm.normalize_derivative(&data.derivs),
        }
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> DiffBatch {
        let n = self.states.cols();
        DiffBatch {
            states: Matrix::from_fn(idx.len(), n, |i, j| self.states.get(idx[i], j)),
            derivs: Matrix::from_fn(idx.len(), n, |i, j| self.derivs.get(idx[i], j)),
        }
    }
}

/// Windows re-expressed in normalized coordinates; times pass through.
pub fn normalize_windows(model: &KoopmanModel, windows: &[Window]) -> Vec<Window> {
    windows
        .iter()
        .map(|w| Window {
            times: w.times.clone(),
            states: model.normalizer().normalize(&w.states),
        })
        .collect()
}

/// Residual matrices of the derivative objective: `linear` holds
/// Phi(z) K - zdot . grad Phi(z) row per sample, `recon` holds
/// Psi(Phi(z)) - z.
pub struct DiffResiduals {
    pub linear: Var,
    pub recon: Var,
}

pub fn diff_residuals_on_tape(
    model: &KoopmanModel,
    tape: &mut Tape,
    vars: &ModelVars,
    batch: &DiffBatch,
) -> DiffResiduals {
    let z = tape.constant(batch.states.clone());
    let zdot = tape.constant(batch.derivs.clone());
    let (phi, preacts) = model.encode_on_tape(tape, z, vars);
    let jvp = model.encode_jvp_on_tape(tape, zdot, &preacts, vars);
    let phik = tape.matmul(phi, vars.k);
    let linear = tape.sub(phik, jvp);
    let dec = model.decode_on_tape(tape, phi, vars);
    let recon = tape.sub(dec, z);
    DiffResiduals { linear, recon }
}

/// Mean over the batch of the weighted squared residuals.
pub fn diff_loss_on_tape(
    model: &KoopmanModel,
    tape: &mut Tape,
    vars: &ModelVars,
    batch: &DiffBatch,
    weights: LossWeights,
) -> Var {
    let r = diff_residuals_on_tape(model, tape, vars, batch);
    let inv = 1.0 / batch.len() as f64;
    let lin = tape.sum_squares(r.linear);
    let lin = tape.scale_const(lin, weights.linear * inv);
    let rec = tape.sum_squares(r.recon);
    let rec = tape.scale_const(rec, weights.reconstruction * inv);
    tape.add(lin, rec)
}

/// Residuals of one rolled-out window. `linear` is absent for a window
/// holding only its initial snapshot, where the rollout degenerates to a
/// single reconstruction.
pub struct WindowResiduals {
    pub linear: Option<Var>,
    pub recon: Var,
    pub len: usize,
}

/// Rollout residuals for a batch of normalized windows. The latent state is
/// advanced analytically, Phi(z_1) e^{(t_j - t_1) K}, and compared against
/// the encoded and raw snapshots.
pub fn recurrent_residuals_on_tape(
    model: &KoopmanModel,
    tape: &mut Tape,
    vars: &ModelVars,
    windows: &[&Window],
) -> Result<Vec<WindowResiduals>> {
    let propagators = window_propagators(tape, vars.k, windows)?;
    let mut out = Vec::with_capacity(windows.len());
    for (w, props) in windows.iter().zip(&propagators) {
        let t = w.states.rows();
        let n = w.states.cols();
        let z1 = tape.constant(Matrix::from_fn(1, n, |_, j| w.states.get(0, j)));
        let (phi1, _) = model.encode_on_tape(tape, z1, vars);
        let mut advanced = Vec::with_capacity(t);
        advanced.push(phi1);
        for &e in props {
            advanced.push(tape.matmul(phi1, e));
        }

        let linear = if t >= 2 {
            let rest = tape.constant(Matrix::from_fn(t - 1, n, |i, j| w.states.get(i + 1, j)));
            let (phi_rest, _) = model.encode_on_tape(tape, rest, vars);
            let tail = tape.concat_rows(&advanced[1..]);
            Some(tape.sub(tail, phi_rest))
        } else {
            None
        };

        let rollout = if t >= 2 {
            tape.concat_rows(&advanced)
        } else {
            advanced[0]
        };
        let dec = model.decode_on_tape(tape, rollout, vars);
        let z = tape.constant(w.states.clone());
        let recon = tape.sub(dec, z);
        out.push(WindowResiduals {
            linear,
            recon,
            len: t,
        });
    }
    Ok(out)
}

/// Mean over windows of the per-window average weighted squared residuals.
pub fn recurrent_loss_on_tape(
    model: &KoopmanModel,
    tape: &mut Tape,
    vars: &ModelVars,
    windows: &[&Window],
    weights: LossWeights,
) -> Result<Var> {
    assert!(!windows.is_empty(), "recurrent loss needs at least one window");
    let residuals = recurrent_residuals_on_tape(model, tape, vars, windows)?;
    let mut acc: Option<Var> = None;
    for r in &residuals {
        let rec = tape.sum_squares(r.recon);
        let mut total = tape.scale_const(rec, weights.reconstruction);
        if let Some(lin) = r.linear {
            let l = tape.sum_squares(lin);
            let l = tape.scale_const(l, weights.linear);
            total = tape.add(total, l);
        }
        let total = tape.scale_const(total, 1.0 / r.len as f64);
        acc = Some(match acc {
            Some(a) => tape.add(a, total),
            None => total,
        });
    }
    Ok(tape.scale_const(acc.unwrap(), 1.0 / windows.len() as f64))
}

/// Squared Frobenius penalty on the network weight matrices (biases and
/// operator parameters excluded). Returns `None` when the coefficient is
/// zero so callers skip the extra nodes.
pub fn weight_decay_on_tape(
    tape: &mut Tape,
    vars: &ModelVars,
    coefficient: f64,
) -> Option<Var> {
    if coefficient == 0.0 {
        return None;
    }
    let mut acc: Option<Var> = None;
    for &w in vars.enc.weights.iter().chain(vars.dec.weights.iter()) {
        let s = tape.sum_squares(w);
        acc = Some(match acc {
            Some(a) => tape.add(a, s),
            None => s,
        });
    }
    acc.map(|a| tape.scale_const(a, coefficient))
}

/// e^{(t_j - t_1) K} per window offset. When every window sits on one
/// uniform grid a single matrix exponential is chained by repeated
/// multiplication and shared across the batch; otherwise each offset gets
/// its own exponential.
fn window_propagators(
    tape: &mut Tape,
    k: Var,
    windows: &[&Window],
) -> Result<Vec<Vec<Var>>> {
    if let Some(dt) = common_uniform_dt(windows) {
        let max_len = windows.iter().map(|w| w.states.rows()).max().unwrap_or(0);
        let mut powers: Vec<Var> = Vec::new();
        if max_len >= 2 {
            let kdt = tape.scale_const(k, dt);
            let e1 = tape.matexp(kdt)?;
            powers.push(e1);
            for _ in 2..max_len {
                let prev = *powers.last().unwrap();
                powers.push(tape.matmul(prev, e1));
            }
        }
        return Ok(windows
            .iter()
            .map(|w| powers[..w.states.rows() - 1].to_vec())
            .collect());
    }
    windows
        .iter()
        .map(|w| {
            (1..w.times.len())
                .map(|j| {
                    let kt = tape.scale_const(k, w.times[j] - w.times[0]);
                    tape.matexp(kt)
                })
                .collect()
        })
        .collect()
}

fn common_uniform_dt(windows: &[&Window]) -> Option<f64> {
    let mut dt: Option<f64> = None;
    for w in windows {
        if w.len() < 2 {
            continue;
        }
        let wdt = w.uniform_dt()?;
        match dt {
            None => dt = Some(wdt),
            Some(d) if (wdt - d).abs() <= 1e-9 * d.abs().max(wdt.abs()) => {}
            Some(_) => return None,
        }
    }
    dt
}
