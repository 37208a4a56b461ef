//! Thin singular value decomposition by one-sided Jacobi rotations. Accurate
//! to near machine precision for the moderate sizes used here, at the cost of
//! a few extra sweeps over a bidiagonalization approach.

use super::Matrix;
use crate::error::{CoreError, Result};

/// X = U diag(s) V^T with U: m x k, V: n x k, k = min(m, n),
/// singular values descending.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

const MAX_SWEEPS: usize = 60;
const JACOBI_TOL: f64 = 1e-15;

pub fn thin_svd(a: &Matrix) -> Result<ThinSvd> {
    if !a.is_finite() {
        return Err(CoreError::NonFinite("svd input".into()));
    }
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose())?;
        Ok(ThinSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        })
    }
}

/// One-sided Jacobi for m >= n: orthogonalize the columns of a working copy,
/// accumulating the right rotations into V.
fn jacobi_tall(a: &Matrix) -> Result<ThinSvd> {
    let m = a.rows();
    let n = a.cols();
    let mut w = a.clone();
    let mut v = Matrix::identity(n);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    let wp = w.get(i, p);
                    let wq = w.get(i, q);
                    app += wp * wp;
                    aqq += wq * wq;
                    apq += wp * wq;
                }
                if apq.abs() <= JACOBI_TOL * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let wp = w.get(i, p);
                    let wq = w.get(i, q);
                    w.set(i, p, c * wp - s * wq);
                    w.set(i, q, s * wp + c * wq);
                }
                for i in 0..n {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(CoreError::Convergence {
            iterations: MAX_SWEEPS,
            context: "one-sided Jacobi SVD".into(),
        });
    }

    let mut s: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| w.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap().then(i.cmp(&j)));

    let mut u = Matrix::zeros(m, n);
    let mut v_sorted = Matrix::zeros(n, n);
    let s_sorted: Vec<f64> = order.iter().map(|&j| s[j]).collect();
    for (dst, &src) in order.iter().enumerate() {
        if s[src] > 0.0 {
            for i in 0..m {
                u.set(i, dst, w.get(i, src) / s[src]);
            }
        }
        for i in 0..n {
            v_sorted.set(i, dst, v.get(i, src));
        }
    }
    s = s_sorted;

    // Columns for exactly zero singular values get an orthonormal completion
    // so U stays column-orthonormal.
    for j in 0..n {
        if s[j] > 0.0 {
            continue;
        }
        'basis: for b in 0..m {
            let mut cand = vec![0.0; m];
            cand[b] = 1.0;
            for k in 0..n {
                if k == j {
                    continue;
                }
                let dot: f64 = (0..m).map(|i| cand[i] * u.get(i, k)).sum();
                for i in 0..m {
                    cand[i] -= dot * u.get(i, k);
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                for i in 0..m {
                    u.set(i, j, cand[i] / norm);
                }
                break 'basis;
            }
        }
    }

    Ok(ThinSvd { u, s, v: v_sorted })
}
