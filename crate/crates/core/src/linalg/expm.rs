//! Matrix exponential by scaling and squaring with a degree-13 Pade
//! approximant. The scaling power is chosen from the 1-norm so that the
//! scaled argument lands inside the approximant's accuracy radius.

use super::{Lu, Matrix};
use crate::error::Result;

/// 1-norm radius within which the degree-13 approximant is accurate to
/// double precision.
const THETA_13: f64 = 5.371920351148152;

/// Numerator coefficients of the degree-13 approximant, shared with the
/// differentiable tape version of this routine.
pub(crate) const B: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Number of squarings for an argument of the given 1-norm.
pub(crate) fn scaling_power(norm_one: f64) -> usize {
    if norm_one <= THETA_13 {
        0
    } else {
        (norm_one / THETA_13).log2().ceil() as usize
    }
}

/// e^A for a square matrix A.
pub fn matexp(a: &Matrix) -> Result<Matrix> {
    assert_eq!(a.rows(), a.cols(), "matexp needs a square matrix");
    let n = a.rows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let s = scaling_power(a.norm_one());
    let b = a.scale(0.5f64.powi(s as i32));

    let b2 = b.matmul(&b);
    let b4 = b2.matmul(&b2);
    let b6 = b2.matmul(&b4);
    let eye = Matrix::identity(n);

    // U = B (B6 (b13 B6 + b11 B4 + b9 B2) + b7 B6 + b5 B4 + b3 B2 + b1 I)
    let mut inner = b6.scale(B[13]);
    inner.axpy(B[11], &b4);
    inner.axpy(B[9], &b2);
    let mut u = b6.matmul(&inner);
    u.axpy(B[7], &b6);
    u.axpy(B[5], &b4);
    u.axpy(B[3], &b2);
    u.axpy(B[1], &eye);
    let u = b.matmul(&u);

    // V = B6 (b12 B6 + b10 B4 + b8 B2) + b6 B6 + b4 B4 + b2 B2 + b0 I
    let mut inner = b6.scale(B[12]);
    inner.axpy(B[10], &b4);
    inner.axpy(B[8], &b2);
    let mut v = b6.matmul(&inner);
    v.axpy(B[6], &b6);
    v.axpy(B[4], &b4);
    v.axpy(B[2], &b2);
    v.axpy(B[0], &eye);

    // (V - U) E = (V + U)
    let p = v.add(&u);
    let q = v.sub(&u);
    let mut e = Lu::factor(&q)?.solve(&p);
    for _ in 0..s {
        e = e.matmul(&e);
    }
    Ok(e)
}
