//! Eigenvalues and right eigenvectors of real square matrices via Householder
//! reduction to upper Hessenberg form followed by the implicit double-shift
//! QR iteration, in the classic EISPACK/Jama formulation. Complex conjugate
//! pairs come out in adjacent positions.

use super::Matrix;
use crate::error::{CoreError, Result};
use num_complex::Complex64;

/// Eigenvalues of a real matrix. Conjugate pairs are adjacent, the member
/// with positive imaginary part first.
#[derive(Clone, Debug)]
pub struct ComplexSpectrum {
    values: Vec<Complex64>,
}

/// One irreducible piece of a conjugate-closed spectrum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralPart {
    Real(f64),
    /// A conjugate pair re +/- i*im with im > 0.
    Pair { re: f64, im: f64 },
}

impl ComplexSpectrum {
    pub fn new(values: Vec<Complex64>) -> Self {
        ComplexSpectrum { values }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_real(&self) -> f64 {
        self.values
            .iter()
            .fold(f64::NEG_INFINITY, |m, v| m.max(v.re))
    }

    /// Deterministic reporting order: descending real part, then ascending
    /// imaginary magnitude, positive imaginary part first within a pair.
    pub fn sorted(&self) -> Vec<Complex64> {
        let mut v = self.values.clone();
        v.sort_by(|a, b| {
            b.re.partial_cmp(&a.re)
                .unwrap()
                .then(a.im.abs().partial_cmp(&b.im.abs()).unwrap())
                .then(b.im.partial_cmp(&a.im).unwrap())
        });
        v
    }

    /// Group into real eigenvalues and conjugate pairs. Fails when a complex
    /// eigenvalue has no adjacent conjugate partner within tolerance.
    pub fn parts(&self) -> Result<Vec<SpectralPart>> {
        let mut parts = Vec::new();
        let mut i = 0;
        while i < self.values.len() {
            let v = self.values[i];
            if v.im == 0.0 {
                parts.push(SpectralPart::Real(v.re));
                i += 1;
                continue;
            }
            if i + 1 >= self.values.len() {
                return Err(CoreError::Domain(
                    "complex eigenvalue without conjugate partner".into(),
                ));
            }
            let w = self.values[i + 1];
            let scale = 1.0 + v.norm();
            if (v.re - w.re).abs() > 1e-9 * scale || (v.im + w.im).abs() > 1e-9 * scale {
                return Err(CoreError::Domain(
                    "complex eigenvalues are not conjugate-paired".into(),
                ));
            }
            parts.push(SpectralPart::Pair {
                re: 0.5 * (v.re + w.re),
                im: v.im.abs(),
            });
            i += 2;
        }
        Ok(parts)
    }
}

struct Hqr {
    n: usize,
    h: Matrix,
    v: Matrix,
    d: Vec<f64>,
    e: Vec<f64>,
    ort: Vec<f64>,
}

impl Hqr {
    fn new(a: &Matrix) -> Self {
        let n = a.rows();
        Hqr {
            n,
            h: a.clone(),
            v: Matrix::identity(n),
            d: vec![0.0; n],
            e: vec![0.0; n],
            ort: vec![0.0; n],
        }
    }

    /// Householder reduction to upper Hessenberg form, accumulating the
    /// orthogonal similarity in `v`.
    fn orthes(&mut self) {
        let n = self.n;
        if n < 3 {
            return;
        }
        let low = 0usize;
        let high = n - 1;

        for m in (low + 1)..high {
            let mut scale = 0.0;
            for i in m..=high {
                scale += self.h.get(i, m - 1).abs();
            }
            if scale == 0.0 {
                continue;
            }
            let mut h = 0.0;
            for i in (m..=high).rev() {
                self.ort[i] = self.h.get(i, m - 1) / scale;
                h += self.ort[i] * self.ort[i];
            }
            let mut g = h.sqrt();
            if self.ort[m] > 0.0 {
                g = -g;
            }
            h -= self.ort[m] * g;
            self.ort[m] -= g;

            for j in m..n {
                let mut f = 0.0;
                for i in (m..=high).rev() {
                    f += self.ort[i] * self.h.get(i, j);
                }
                f /= h;
                for i in m..=high {
                    let v = self.h.get(i, j) - f * self.ort[i];
                    self.h.set(i, j, v);
                }
            }
            for i in 0..=high {
                let mut f = 0.0;
                for j in (m..=high).rev() {
                    f += self.ort[j] * self.h.get(i, j);
                }
                f /= h;
                for j in m..=high {
                    let v = self.h.get(i, j) - f * self.ort[j];
                    self.h.set(i, j, v);
                }
            }
            self.ort[m] *= scale;
            self.h.set(m, m - 1, scale * g);
        }

        for m in ((low + 1)..high).rev() {
            if self.h.get(m, m - 1) == 0.0 {
                continue;
            }
            for i in (m + 1)..=high {
                self.ort[i] = self.h.get(i, m - 1);
            }
            for j in m..=high {
                let mut g = 0.0;
                for i in m..=high {
                    g += self.ort[i] * self.v.get(i, j);
                }
                // double division avoids possible underflow
                g = (g / self.ort[m]) / self.h.get(m, m - 1);
                for i in m..=high {
                    let v = self.v.get(i, j) + g * self.ort[i];
                    self.v.set(i, j, v);
                }
            }
        }
    }

    /// Hessenberg to real Schur form with eigenvector back-substitution.
    /// The total QR sweep budget is 30 n.
    fn hqr2(&mut self) -> Result<()> {
        let nn = self.n;
        let mut n: i64 = nn as i64 - 1;
        let low: i64 = 0;
        let high: i64 = nn as i64 - 1;
        let eps = 2.0f64.powi(-52);
        let budget = 30 * nn;
        let mut total_iter = 0usize;
        let mut exshift = 0.0;
        let (mut p, mut q, mut r, mut s, mut z) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut t, mut w, mut x, mut y);

        let mut norm = 0.0;
        for i in 0..nn {
            for j in i.saturating_sub(1)..nn {
                norm += self.h.get(i, j).abs();
            }
        }

        let mut iter = 0;
        while n >= low {
            // look for a single small subdiagonal element
            let mut l = n;
            while l > low {
                let lu = l as usize;
                s = self.h.get(lu - 1, lu - 1).abs() + self.h.get(lu, lu).abs();
                if s == 0.0 {
                    s = norm;
                }
                if self.h.get(lu, lu - 1).abs() < eps * s {
                    break;
                }
                l -= 1;
            }

            if l == n {
                // one root found
                let nu = n as usize;
                let v = self.h.get(nu, nu) + exshift;
                self.h.set(nu, nu, v);
                self.d[nu] = v;
                self.e[nu] = 0.0;
                n -= 1;
                iter = 0;
            } else if l == n - 1 {
                // two roots found
                let nu = n as usize;
                w = self.h.get(nu, nu - 1) * self.h.get(nu - 1, nu);
                p = (self.h.get(nu - 1, nu - 1) - self.h.get(nu, nu)) / 2.0;
                q = p * p + w;
                z = q.abs().sqrt();
                let v = self.h.get(nu, nu) + exshift;
                self.h.set(nu, nu, v);
                let v = self.h.get(nu - 1, nu - 1) + exshift;
                self.h.set(nu - 1, nu - 1, v);
                x = self.h.get(nu, nu);

                if q >= 0.0 {
                    // real pair
                    z = if p >= 0.0 { p + z } else { p - z };
                    self.d[nu - 1] = x + z;
                    self.d[nu] = self.d[nu - 1];
                    if z != 0.0 {
                        self.d[nu] = x - w / z;
                    }
                    self.e[nu - 1] = 0.0;
                    self.e[nu] = 0.0;
                    x = self.h.get(nu, nu - 1);
                    s = x.abs() + z.abs();
                    p = x / s;
                    q = z / s;
                    r = (p * p + q * q).sqrt();
                    p /= r;
                    q /= r;

                    for j in (nu - 1)..nn {
                        z = self.h.get(nu - 1, j);
                        self.h.set(nu - 1, j, q * z + p * self.h.get(nu, j));
                        self.h.set(nu, j, q * self.h.get(nu, j) - p * z);
                    }
                    for i in 0..=nu {
                        z = self.h.get(i, nu - 1);
                        self.h.set(i, nu - 1, q * z + p * self.h.get(i, nu));
                        self.h.set(i, nu, q * self.h.get(i, nu) - p * z);
                    }
                    for i in low as usize..=high as usize {
                        z = self.v.get(i, nu - 1);
                        self.v.set(i, nu - 1, q * z + p * self.v.get(i, nu));
                        self.v.set(i, nu, q * self.v.get(i, nu) - p * z);
                    }
                } else {
                    // complex pair
                    self.d[nu - 1] = x + p;
                    self.d[nu] = x + p;
                    self.e[nu - 1] = z;
                    self.e[nu] = -z;
                }
                n -= 2;
                iter = 0;
            } else {
                // no convergence yet: form shift
                let nu = n as usize;
                x = self.h.get(nu, nu);
                y = 0.0;
                w = 0.0;
                if l < n {
                    y = self.h.get(nu - 1, nu - 1);
                    w = self.h.get(nu, nu - 1) * self.h.get(nu - 1, nu);
                }

                // Wilkinson's original ad hoc shift
                if iter == 10 {
                    exshift += x;
                    for i in low as usize..=nu {
                        let v = self.h.get(i, i) - x;
                        self.h.set(i, i, v);
                    }
                    s = self.h.get(nu, nu - 1).abs() + self.h.get(nu - 1, nu - 2).abs();
                    x = 0.75 * s;
                    y = x;
                    w = -0.4375 * s * s;
                }

                // MATLAB's ad hoc shift
                if iter == 30 {
                    s = (y - x) / 2.0;
                    s = s * s + w;
                    if s > 0.0 {
                        s = s.sqrt();
                        if y < x {
                            s = -s;
                        }
                        s = x - w / ((y - x) / 2.0 + s);
                        for i in low as usize..=nu {
                            let v = self.h.get(i, i) - s;
                            self.h.set(i, i, v);
                        }
                        exshift += s;
                        x = 0.964;
                        y = x;
                        w = x;
                    }
                }

                iter += 1;
                total_iter += 1;
                if total_iter > budget {
                    return Err(CoreError::Convergence {
                        iterations: total_iter,
                        context: "QR iteration budget exhausted".into(),
                    });
                }

                // look for two consecutive small subdiagonal elements
                let mut m = n - 2;
                while m >= l {
                    let mu = m as usize;
                    z = self.h.get(mu, mu);
                    r = x - z;
                    s = y - z;
                    p = (r * s - w) / self.h.get(mu + 1, mu) + self.h.get(mu, mu + 1);
                    q = self.h.get(mu + 1, mu + 1) - z - r - s;
                    r = self.h.get(mu + 2, mu + 1);
                    s = p.abs() + q.abs() + r.abs();
                    p /= s;
                    q /= s;
                    r /= s;
                    if m == l {
                        break;
                    }
                    if self.h.get(mu, mu - 1).abs() * (q.abs() + r.abs())
                        < eps
                            * (p.abs()
                                * (self.h.get(mu - 1, mu - 1).abs()
                                    + z.abs()
                                    + self.h.get(mu + 1, mu + 1).abs()))
                    {
                        break;
                    }
                    m -= 1;
                }

                for i in (m as usize + 2)..=nu {
                    self.h.set(i, i - 2, 0.0);
                    if i > m as usize + 2 {
                        self.h.set(i, i - 3, 0.0);
                    }
                }

                // double QR step on rows l..n and columns m..n
                for k in m as usize..nu {
                    let notlast = k != nu - 1;
                    if k != m as usize {
                        p = self.h.get(k, k - 1);
                        q = self.h.get(k + 1, k - 1);
                        r = if notlast { self.h.get(k + 2, k - 1) } else { 0.0 };
                        x = p.abs() + q.abs() + r.abs();
                        if x == 0.0 {
                            continue;
                        }
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                    s = (p * p + q * q + r * r).sqrt();
                    if p < 0.0 {
                        s = -s;
                    }
                    if s == 0.0 {
                        continue;
                    }
                    if k != m as usize {
                        self.h.set(k, k - 1, -s * x);
                    } else if l != m {
                        let v = -self.h.get(k, k - 1);
                        self.h.set(k, k - 1, v);
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        p = self.h.get(k, j) + q * self.h.get(k + 1, j);
                        if notlast {
                            p += r * self.h.get(k + 2, j);
                            let v = self.h.get(k + 2, j) - p * z;
                            self.h.set(k + 2, j, v);
                        }
                        let v = self.h.get(k, j) - p * x;
                        self.h.set(k, j, v);
                        let v = self.h.get(k + 1, j) - p * y;
                        self.h.set(k + 1, j, v);
                    }
                    for i in 0..=nu.min(k + 3) {
                        p = x * self.h.get(i, k) + y * self.h.get(i, k + 1);
                        if notlast {
                            p += z * self.h.get(i, k + 2);
                            let v = self.h.get(i, k + 2) - p * r;
                            self.h.set(i, k + 2, v);
                        }
                        let v = self.h.get(i, k) - p;
                        self.h.set(i, k, v);
                        let v = self.h.get(i, k + 1) - p * q;
                        self.h.set(i, k + 1, v);
                    }
                    for i in low as usize..=high as usize {
                        p = x * self.v.get(i, k) + y * self.v.get(i, k + 1);
                        if notlast {
                            p += z * self.v.get(i, k + 2);
                            let v = self.v.get(i, k + 2) - p * r;
                            self.v.set(i, k + 2, v);
                        }
                        let v = self.v.get(i, k) - p;
                        self.v.set(i, k, v);
                        let v = self.v.get(i, k + 1) - p * q;
                        self.v.set(i, k + 1, v);
                    }
                }
            }
        }

        // back-substitute to find vectors of the quasi-triangular form
        if norm == 0.0 {
            return Ok(());
        }
        for n in (0..nn).rev() {
            p = self.d[n];
            q = self.e[n];

            if q == 0.0 {
                // real vector
                let mut l = n;
                self.h.set(n, n, 1.0);
                for i in (0..n).rev() {
                    w = self.h.get(i, i) - p;
                    r = 0.0;
                    for j in l..=n {
                        r += self.h.get(i, j) * self.h.get(j, n);
                    }
                    if self.e[i] < 0.0 {
                        z = w;
                        s = r;
                        continue;
                    }
                    l = i;
                    if self.e[i] == 0.0 {
                        if w != 0.0 {
                            self.h.set(i, n, -r / w);
                        } else {
                            self.h.set(i, n, -r / (eps * norm));
                        }
                    } else {
                        // solve the real 2x2 system
                        x = self.h.get(i, i + 1);
                        y = self.h.get(i + 1, i);
                        q = (self.d[i] - p) * (self.d[i] - p) + self.e[i] * self.e[i];
                        t = (x * s - z * r) / q;
                        self.h.set(i, n, t);
                        if x.abs() > z.abs() {
                            self.h.set(i + 1, n, (-r - w * t) / x);
                        } else {
                            self.h.set(i + 1, n, (-s - y * t) / z);
                        }
                    }
                    // overflow control
                    t = self.h.get(i, n).abs();
                    if (eps * t) * t > 1.0 {
                        for j in i..=n {
                            let v = self.h.get(j, n) / t;
                            self.h.set(j, n, v);
                        }
                    }
                }
            } else if q < 0.0 {
                // complex vector, stored as (real, imag) in columns n-1, n
                let mut l = n - 1;

                if self.h.get(n, n - 1).abs() > self.h.get(n - 1, n).abs() {
                    self.h.set(n - 1, n - 1, q / self.h.get(n, n - 1));
                    self.h
                        .set(n - 1, n, -(self.h.get(n, n) - p) / self.h.get(n, n - 1));
                } else {
                    let (re, im) = cdiv(0.0, -self.h.get(n - 1, n), self.h.get(n - 1, n - 1) - p, q);
                    self.h.set(n - 1, n - 1, re);
                    self.h.set(n - 1, n, im);
                }
                self.h.set(n, n - 1, 0.0);
                self.h.set(n, n, 1.0);
                for i in (0..n - 1).rev() {
                    let mut ra = 0.0;
                    let mut sa = 0.0;
                    for j in l..=n {
                        ra += self.h.get(i, j) * self.h.get(j, n - 1);
                        sa += self.h.get(i, j) * self.h.get(j, n);
                    }
                    w = self.h.get(i, i) - p;

                    if self.e[i] < 0.0 {
                        z = w;
                        r = ra;
                        s = sa;
                        continue;
                    }
                    l = i;
                    if self.e[i] == 0.0 {
                        let (re, im) = cdiv(-ra, -sa, w, q);
                        self.h.set(i, n - 1, re);
                        self.h.set(i, n, im);
                    } else {
                        // solve the complex 2x2 system
                        x = self.h.get(i, i + 1);
                        y = self.h.get(i + 1, i);
                        let mut vr = (self.d[i] - p) * (self.d[i] - p) + self.e[i] * self.e[i]
                            - q * q;
                        let vi = (self.d[i] - p) * 2.0 * q;
                        if vr == 0.0 && vi == 0.0 {
                            vr = eps
                                * norm
                                * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                        }
                        let (re, im) =
                            cdiv(x * r - z * ra + q * sa, x * s - z * sa - q * ra, vr, vi);
                        self.h.set(i, n - 1, re);
                        self.h.set(i, n, im);
                        if x.abs() > z.abs() + q.abs() {
                            self.h.set(
                                i + 1,
                                n - 1,
                                (-ra - w * self.h.get(i, n - 1) + q * self.h.get(i, n)) / x,
                            );
                            self.h.set(
                                i + 1,
                                n,
                                (-sa - w * self.h.get(i, n) - q * self.h.get(i, n - 1)) / x,
                            );
                        } else {
                            let (re, im) = cdiv(
                                -r - y * self.h.get(i, n - 1),
                                -s - y * self.h.get(i, n),
                                z,
                                q,
                            );
                            self.h.set(i + 1, n - 1, re);
                            self.h.set(i + 1, n, im);
                        }
                    }
                    // overflow control
                    t = self.h.get(i, n - 1).abs().max(self.h.get(i, n).abs());
                    if (eps * t) * t > 1.0 {
                        for j in i..=n {
                            let v = self.h.get(j, n - 1) / t;
                            self.h.set(j, n - 1, v);
                            let v = self.h.get(j, n) / t;
                            self.h.set(j, n, v);
                        }
                    }
                }
            }
        }

        // back transformation to eigenvectors of the original matrix
        for j in (0..nn).rev() {
            for i in 0..nn {
                z = 0.0;
                for k in 0..=j {
                    z += self.v.get(i, k) * self.h.get(k, j);
                }
                self.v.set(i, j, z);
            }
        }
        Ok(())
    }
}

fn cdiv(xr: f64, xi: f64, yr: f64, yi: f64) -> (f64, f64) {
    if yr.abs() > yi.abs() {
        let r = yi / yr;
        let d = yr + r * yi;
        ((xr + r * xi) / d, (xi - r * xr) / d)
    } else {
        let r = yr / yi;
        let d = yi + r * yr;
        ((r * xr + xi) / d, (r * xi - xr) / d)
    }
}

fn run(a: &Matrix) -> Result<Hqr> {
    assert_eq!(a.rows(), a.cols(), "eigen needs a square matrix");
    if !a.is_finite() {
        return Err(CoreError::NonFinite("eigen input".into()));
    }
    let mut hqr = Hqr::new(a);
    hqr.orthes();
    hqr.hqr2()?;
    Ok(hqr)
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(a: &Matrix) -> Result<ComplexSpectrum> {
    let hqr = run(a)?;
    let values = hqr
        .d
        .iter()
        .zip(&hqr.e)
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect();
    Ok(ComplexSpectrum::new(values))
}

/// Eigenvalues and unit-norm right eigenvectors (columns, complex). The
/// phase is fixed so the largest-magnitude component is real and positive.
pub fn eigen_decomposition(a: &Matrix) -> Result<(ComplexSpectrum, Vec<Vec<Complex64>>)> {
    let hqr = run(a)?;
    let n = hqr.n;
    let mut vectors: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    let mut k = 0;
    while k < n {
        if hqr.e[k] == 0.0 {
            let col: Vec<Complex64> = (0..n)
                .map(|i| Complex64::new(hqr.v.get(i, k), 0.0))
                .collect();
            vectors.push(normalize(col));
            k += 1;
        } else {
            let re: Vec<f64> = (0..n).map(|i| hqr.v.get(i, k)).collect();
            let im: Vec<f64> = (0..n).map(|i| hqr.v.get(i, k + 1)).collect();
            let col: Vec<Complex64> = re
                .iter()
                .zip(&im)
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect();
            let col = normalize(col);
            let conj: Vec<Complex64> = col.iter().map(|c| c.conj()).collect();
            vectors.push(col);
            vectors.push(conj);
            k += 2;
        }
    }
    let values = hqr
        .d
        .iter()
        .zip(&hqr.e)
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect();
    Ok((ComplexSpectrum::new(values), vectors))
}

fn normalize(mut v: Vec<Complex64>) -> Vec<Complex64> {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    let mut lead = Complex64::new(0.0, 0.0);
    let mut best = -1.0;
    for c in &v {
        if c.norm() > best {
            best = c.norm();
            lead = *c;
        }
    }
    let phase = lead / lead.norm();
    for c in v.iter_mut() {
        *c = *c / (phase * norm);
    }
    v
}
