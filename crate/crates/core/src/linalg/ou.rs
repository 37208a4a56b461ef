//! Covariance of the Ornstein-Uhlenbeck process driven by a Koopman
//! generator: Sigma(t) = integral over [0, t] of e^{sK} L e^{sK^T} ds with
//! diagonal forcing L. The closed form inverts the Kronecker sum K (+) K;
//! when that sum is singular (eigenvalue pairs summing to zero, e.g. a
//! purely imaginary spectrum) the integral falls back to adaptive Simpson
//! quadrature.

use super::{kron, matexp, unvec_square, vec_columns, Lu, Matrix};
use crate::error::{CoreError, Result};

/// Quadrature absolute tolerance used by the singular fallback.
const QUAD_TOL: f64 = 1e-9;

/// Kronecker sum A (+) B = A x I_m + I_n x B.
pub fn kron_sum(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows(), a.cols(), "kron_sum needs square A");
    assert_eq!(b.rows(), b.cols(), "kron_sum needs square B");
    let ia = Matrix::identity(a.rows());
    let ib = Matrix::identity(b.rows());
    kron(a, &ib).add(&kron(&ia, b))
}

/// OU covariance at time t for generator K and diagonal forcing intensities
/// `lambda_diag`. Satisfies d Sigma/dt = K Sigma + Sigma K^T + L.
pub fn ou_covariance(k: &Matrix, lambda_diag: &[f64], t: f64) -> Result<Matrix> {
    let d = k.rows();
    assert_eq!(k.cols(), d, "ou_covariance needs square K");
    if lambda_diag.len() != d {
        return Err(CoreError::DimensionMismatch(format!(
            "forcing diagonal has {} entries for a {}-dim generator",
            lambda_diag.len(),
            d
        )));
    }
    if lambda_diag.iter().any(|&l| l < 0.0) {
        return Err(CoreError::Domain("negative forcing intensity".into()));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(CoreError::Domain(format!("time {t} outside [0, inf)")));
    }
    if t == 0.0 {
        return Ok(Matrix::zeros(d, d));
    }

    let m = kron_sum(k, k);
    let lambda = Matrix::diag(lambda_diag);
    let mut sigma = match Lu::factor_with_tol(&m, 1e-10) {
        Ok(lu) => {
            // vec(Sigma) = M^{-1} (e^{tM} - I) vec(L)
            let e = matexp(&m.scale(t))?;
            let rhs = e
                .sub(&Matrix::identity(d * d))
                .matmul(&vec_columns(&lambda));
            unvec_square(&lu.solve(&rhs), d)
        }
        Err(_) => ou_covariance_quadrature(k, lambda_diag, t, QUAD_TOL)?,
    };
    sigma.symmetrize();
    if !sigma.is_finite() {
        return Err(CoreError::NonFinite("ou_covariance result".into()));
    }
    Ok(sigma)
}

/// Direct quadrature of the covariance integrand, used as the fallback for
/// singular Kronecker sums and as an independent check.
pub fn ou_covariance_quadrature(
    k: &Matrix,
    lambda_diag: &[f64],
    t: f64,
    tol: f64,
) -> Result<Matrix> {
    let d = k.rows();
    if t == 0.0 {
        return Ok(Matrix::zeros(d, d));
    }
    let lambda = Matrix::diag(lambda_diag);
    let f = |s: f64| -> Result<Matrix> {
        let e = matexp(&k.scale(s))?;
        Ok(e.matmul(&lambda).matmul(&e.transpose()))
    };
    let fa = f(0.0)?;
    let fm = f(0.5 * t)?;
    let fb = f(t)?;
    let whole = simpson(&fa, &fm, &fb, t);
    adaptive(&f, 0.0, t, &fa, &fm, &fb, &whole, tol, 30)
}

fn simpson(fa: &Matrix, fm: &Matrix, fb: &Matrix, h: f64) -> Matrix {
    let mut s = fa.add(fb);
    s.axpy(4.0, fm);
    s.scale(h / 6.0)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> Result<Matrix>,
    a: f64,
    b: f64,
    fa: &Matrix,
    fm: &Matrix,
    fb: &Matrix,
    whole: &Matrix,
    tol: f64,
    depth: usize,
) -> Result<Matrix> {
    let m = 0.5 * (a + b);
    let lm = f(0.5 * (a + m))?;
    let rm = f(0.5 * (m + b))?;
    let left = simpson(fa, &lm, fm, m - a);
    let right = simpson(fm, &rm, fb, b - m);
    let combined = left.add(&right);
    let err = combined.sub(whole).norm_max() / 15.0;
    if err <= tol || depth == 0 {
        return Ok(combined);
    }
    let l = adaptive(f, a, m, fa, &lm, fm, &left, 0.5 * tol, depth - 1)?;
    let r = adaptive(f, m, b, fm, &rm, fb, &right, 0.5 * tol, depth - 1)?;
    Ok(l.add(&r))
}
