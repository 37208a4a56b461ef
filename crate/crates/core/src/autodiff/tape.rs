//! Reverse-mode automatic differentiation on a tape of matrix-valued nodes.
//!
//! Each training step builds a fresh single-use tape: leaves for parameters,
//! constants for data, then a program of matrix operations ending in a 1x1
//! loss node. `backward` sweeps the tape once and accumulates adjoints for
//! every node that depends on a leaf. Matrix-level nodes (rather than scalar
//! ones) keep the node count per step in the hundreds.

use crate::error::{CoreError, Result};
use crate::linalg::{matexp_scaling_power, Lu, Matrix};
use statrs::function::gamma::{digamma, ln_gamma};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Neg(usize),
    ScaleConst(usize, f64),
    AddConst(usize),
    /// Broadcast a 1 x n row onto every row of a B x n matrix.
    AddRow(usize, usize),
    ElemMul(usize, usize),
    Swish(usize),
    SwishPrime(usize),
    Square(usize),
    Exp(usize),
    Ln(usize),
    Recip(usize),
    Lgamma(usize),
    Sum(usize),
    SumSquares(usize),
    SumCols(usize),
    /// Multiply a matrix by a 1 x 1 scalar node.
    MulScalar(usize, usize),
    /// X = A^{-1} B.
    Solve(usize, usize),
    Transpose(usize),
    /// Stack same-width blocks vertically.
    ConcatRows(Vec<usize>),
    /// Stable generator assembly from (sigma: 1 x D, zeta: 1 x (D-1)).
    AssembleTridiag(usize, usize),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of tape leaves after a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Adjoint of a leaf, a zero matrix of the leaf's shape when the root
    /// does not depend on it.
    pub fn of(&self, tape: &Tape, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.nodes[v.0].value.shape();
                Matrix::zeros(r, c)
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn swish_d1(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn swish_d2(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1 x 1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar node");
        m.get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input (data, fixed embeddings).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_constant(&mut self, v: f64) -> Var {
        self.constant(Matrix::from_vec(1, 1, vec![v]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        let g = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::MatMul(a.0, b.0), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.add(&self.nodes[b.0].value);
        let g = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::Add(a.0, b.0), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.sub(&self.nodes[b.0].value);
        let g = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::Sub(a.0, b.0), g)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.scale(-1.0);
        let g = self.needs(a.0);
        self.push(v, Op::Neg(a.0), g)
    }

    pub fn scale_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.scale(c);
        let g = self.needs(a.0);
        self.push(v, Op::ScaleConst(a.0, c), g)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let m = &self.nodes[a.0].value;
        let v = Matrix::from_vec(
            m.rows(),
            m.cols(),
            m.data().iter().map(|x| x + c).collect(),
        );
        let g = self.needs(a.0);
        self.push(v, Op::AddConst(a.0), g)
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let xm = &self.nodes[x.0].value;
        let rm = &self.nodes[row.0].value;
        assert_eq!(rm.rows(), 1, "add_row needs a 1 x n row");
        assert_eq!(xm.cols(), rm.cols(), "add_row width mismatch");
        let mut v = xm.clone();
        for i in 0..v.rows() {
            for j in 0..v.cols() {
                let s = v.get(i, j) + rm.get(0, j);
                v.set(i, j, s);
            }
        }
        let g = self.needs(x.0) || self.needs(row.0);
        self.push(v, Op::AddRow(x.0, row.0), g)
    }

    pub fn elem_mul(&mut self, a: Var, b: Var) -> Var {
        let am = &self.nodes[a.0].value;
        let bm = &self.nodes[b.0].value;
        assert_eq!(am.shape(), bm.shape(), "elem_mul shape mismatch");
        let v = Matrix::from_vec(
            am.rows(),
            am.cols(),
            am.data()
                .iter()
                .zip(bm.data())
                .map(|(x, y)| x * y)
                .collect(),
        );
        let g = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::ElemMul(a.0, b.0), g)
    }

    fn map_unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let m = &self.nodes[a.0].value;
        let v = Matrix::from_vec(m.rows(), m.cols(), m.data().iter().map(|&x| f(x)).collect());
        let g = self.needs(a.0);
        self.push(v, op, g)
    }

    pub fn swish(&mut self, a: Var) -> Var {
        self.map_unary(a, swish, Op::Swish(a.0))
    }

    pub fn swish_prime(&mut self, a: Var) -> Var {
        self.map_unary(a, swish_d1, Op::SwishPrime(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map_unary(a, |x| x * x, Op::Square(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map_unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map_unary(a, f64::ln, Op::Ln(a.0))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.map_unary(a, f64::recip, Op::Recip(a.0))
    }

    pub fn lgamma(&mut self, a: Var) -> Var {
        self.map_unary(a, ln_gamma, Op::Lgamma(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let g = self.needs(a.0);
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Sum(a.0), g)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().map(|x| x * x).sum();
        let g = self.needs(a.0);
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumSquares(a.0), g)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = &self.nodes[a.0].value;
        let mut v = Matrix::zeros(1, m.cols());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let s = v.get(0, j) + m.get(i, j);
                v.set(0, j, s);
            }
        }
        let g = self.needs(a.0);
        self.push(v, Op::SumCols(a.0), g)
    }

    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(
            self.nodes[s.0].value.shape(),
            (1, 1),
            "mul_scalar needs a 1 x 1 scalar node"
        );
        let c = self.nodes[s.0].value.get(0, 0);
        let v = self.nodes[x.0].value.scale(c);
        let g = self.needs(x.0) || self.needs(s.0);
        self.push(v, Op::MulScalar(x.0, s.0), g)
    }

    pub fn solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let lu = Lu::factor(&self.nodes[a.0].value)?;
        let v = lu.solve(&self.nodes[b.0].value);
        let g = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(v, Op::Solve(a.0, b.0), g))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.transpose();
        let g = self.needs(a.0);
        self.push(v, Op::Transpose(a.0), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows needs at least one block");
        let cols = self.nodes[parts[0].0].value.cols();
        let rows: usize = parts
            .iter()
            .map(|p| {
                let m = &self.nodes[p.0].value;
                assert_eq!(m.cols(), cols, "concat_rows blocks must share a width");
                m.rows()
            })
            .sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let m = &self.nodes[p.0].value;
            for i in 0..m.rows() {
                for j in 0..cols {
                    v.set(offset + i, j, m.get(i, j));
                }
            }
            offset += m.rows();
        }
        let g = parts.iter().any(|p| self.needs(p.0));
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), g)
    }

    /// D x D stable generator: diagonal -sigma_i^2, superdiagonal zeta_i,
    /// subdiagonal -zeta_i.
    pub fn assemble_tridiag(&mut self, sigma: Var, zeta: Var) -> Var {
        let sm = &self.nodes[sigma.0].value;
        let zm = &self.nodes[zeta.0].value;
        assert_eq!(sm.rows(), 1, "sigma must be a row");
        assert_eq!(zm.rows(), 1, "zeta must be a row");
        let d = sm.cols();
        assert_eq!(zm.cols() + 1, d, "zeta must have D - 1 entries");
        let mut k = Matrix::zeros(d, d);
        for i in 0..d {
            let s = sm.get(0, i);
            k.set(i, i, -s * s);
        }
        for i in 0..d - 1 {
            let z = zm.get(0, i);
            k.set(i, i + 1, z);
            k.set(i + 1, i, -z);
        }
        let g = self.needs(sigma.0) || self.needs(zeta.0);
        self.push(k, Op::AssembleTridiag(sigma.0, zeta.0), g)
    }

    /// e^A by scaling and squaring with the shared degree-13 approximant,
    /// fully unrolled so the backward sweep differentiates the exact
    /// computation.
    pub fn matexp(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).rows();
        assert_eq!(self.value(a).cols(), n, "matexp needs a square matrix");
        let s = matexp_scaling_power(self.value(a).norm_one());
        let b = self.scale_const(a, 0.5f64.powi(s as i32));
        let b2 = self.matmul(b, b);
        let b4 = self.matmul(b2, b2);
        let b6 = self.matmul(b2, b4);
        let eye = self.constant(Matrix::identity(n));

        const C: [f64; 14] = crate::linalg::MATEXP_PADE_13;
        let mut inner = self.scale_const(b6, C[13]);
        let t = self.scale_const(b4, C[11]);
        inner = self.add(inner, t);
        let t = self.scale_const(b2, C[9]);
        inner = self.add(inner, t);
        let mut u = self.matmul(b6, inner);
        let t = self.scale_const(b6, C[7]);
        u = self.add(u, t);
        let t = self.scale_const(b4, C[5]);
        u = self.add(u, t);
        let t = self.scale_const(b2, C[3]);
        u = self.add(u, t);
        let t = self.scale_const(eye, C[1]);
        u = self.add(u, t);
        u = self.matmul(b, u);

        let mut inner = self.scale_const(b6, C[12]);
        let t = self.scale_const(b4, C[10]);
        inner = self.add(inner, t);
        let t = self.scale_const(b2, C[8]);
        inner = self.add(inner, t);
        let mut v = self.matmul(b6, inner);
        let t = self.scale_const(b6, C[6]);
        v = self.add(v, t);
        let t = self.scale_const(b4, C[4]);
        v = self.add(v, t);
        let t = self.scale_const(b2, C[2]);
        v = self.add(v, t);
        let t = self.scale_const(eye, C[0]);
        v = self.add(v, t);

        let p = self.add(v, u);
        let q = self.sub(v, u);
        let mut e = self.solve(q, p)?;
        for _ in 0..s {
            e = self.matmul(e, e);
        }
        Ok(e)
    }

    /// Reverse sweep from a 1 x 1 root. Returns the adjoint of every node;
    /// read leaves through `Gradients::of`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rm = self.value(root);
        assert_eq!(rm.shape(), (1, 1), "backward needs a scalar root");
        if !rm.get(0, 0).is_finite() {
            return Err(CoreError::NonFinite("backward root".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                &Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                &Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let da = g.matmul(&self.nodes[b].value.transpose());
                        accumulate(&mut grads, a, da);
                    }
                    if self.needs(b) {
                        let db = self.nodes[a].value.transpose().matmul(&g);
                        accumulate(&mut grads, b, db);
                    }
                }
                &Op::Add(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, g.clone());
                    }
                }
                &Op::Sub(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, g.scale(-1.0));
                    }
                }
                &Op::Neg(a) => accumulate(&mut grads, a, g.scale(-1.0)),
                &Op::ScaleConst(a, c) => accumulate(&mut grads, a, g.scale(c)),
                &Op::AddConst(a) => accumulate(&mut grads, a, g),
                &Op::AddRow(x, row) => {
                    if self.needs(row) {
                        let mut rg = Matrix::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for j in 0..g.cols() {
                                let s = rg.get(0, j) + g.get(i, j);
                                rg.set(0, j, s);
                            }
                        }
                        accumulate(&mut grads, row, rg);
                    }
                    if self.needs(x) {
                        accumulate(&mut grads, x, g);
                    }
                }
                &Op::ElemMul(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, hadamard(&g, &self.nodes[b].value));
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, hadamard(&g, &self.nodes[a].value));
                    }
                }
                &Op::Swish(a) => {
                    let m = map_matrix(&self.nodes[a].value, swish_d1);
                    accumulate(&mut grads, a, hadamard(&g, &m));
                }
                &Op::SwishPrime(a) => {
                    let m = map_matrix(&self.nodes[a].value, swish_d2);
                    accumulate(&mut grads, a, hadamard(&g, &m));
                }
                &Op::Square(a) => {
                    let m = self.nodes[a].value.scale(2.0);
                    accumulate(&mut grads, a, hadamard(&g, &m));
                }
                &Op::Exp(a) => {
                    accumulate(&mut grads, a, hadamard(&g, &self.nodes[i].value));
                }
                &Op::Ln(a) => {
                    let m = map_matrix(&self.nodes[a].value, f64::recip);
                    accumulate(&mut grads, a, hadamard(&g, &m));
                }
                &Op::Recip(a) => {
                    let out = &self.nodes[i].value;
                    let m = map_matrix(out, |x| -x * x);
                    accumulate(&mut grads, a, hadamard(&g, &m));
                }
                &Op::Lgamma(a) => {
                    let m = map_matrix(&self.nodes[a].value, digamma);
                    accumulate(&mut grads, a, hadamard(&g, &m));
                }
                &Op::Sum(a) => {
                    let (r, c) = self.nodes[a].value.shape();
                    let v = g.get(0, 0);
                    accumulate(&mut grads, a, Matrix::from_vec(r, c, vec![v; r * c]));
                }
                &Op::SumSquares(a) => {
                    let da = self.nodes[a].value.scale(2.0 * g.get(0, 0));
                    accumulate(&mut grads, a, da);
                }
                &Op::SumCols(a) => {
                    let (r, c) = self.nodes[a].value.shape();
                    let da = Matrix::from_fn(r, c, |_, j| g.get(0, j));
                    accumulate(&mut grads, a, da);
                }
                &Op::MulScalar(x, s) => {
                    if self.needs(x) {
                        accumulate(&mut grads, x, g.scale(self.nodes[s].value.get(0, 0)));
                    }
                    if self.needs(s) {
                        let dot: f64 = g
                            .data()
                            .iter()
                            .zip(self.nodes[x].value.data())
                            .map(|(p, q)| p * q)
                            .sum();
                        accumulate(&mut grads, s, Matrix::from_vec(1, 1, vec![dot]));
                    }
                }
                &Op::Solve(a, b) => {
                    // X = A^{-1} B; with S = A^{-T} gbar: bbar += S,
                    // abar -= S X^T
                    let at = self.nodes[a].value.transpose();
                    let s_mat = Lu::factor(&at)
                        .expect("factorization succeeded in forward pass")
                        .solve(&g);
                    if self.needs(b) {
                        accumulate(&mut grads, b, s_mat.clone());
                    }
                    if self.needs(a) {
                        let xt = self.nodes[i].value.transpose();
                        accumulate(&mut grads, a, s_mat.matmul(&xt).scale(-1.0));
                    }
                }
                &Op::Transpose(a) => accumulate(&mut grads, a, g.transpose()),
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let r = self.nodes[p].value.rows();
                        if self.needs(p) {
                            let dp =
                                Matrix::from_fn(r, g.cols(), |i, j| g.get(offset + i, j));
                            accumulate(&mut grads, p, dp);
                        }
                        offset += r;
                    }
                }
                &Op::AssembleTridiag(sigma, zeta) => {
                    let d = self.nodes[i].value.rows();
                    if self.needs(sigma) {
                        let sv = &self.nodes[sigma].value;
                        let ds = Matrix::from_fn(1, d, |_, j| -2.0 * sv.get(0, j) * g.get(j, j));
                        accumulate(&mut grads, sigma, ds);
                    }
                    if self.needs(zeta) {
                        let dz =
                            Matrix::from_fn(1, d - 1, |_, j| g.get(j, j + 1) - g.get(j + 1, j));
                        accumulate(&mut grads, zeta, dz);
                    }
                }
            }
            grads[i] = None;
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, delta: Matrix) {
    match &mut grads[idx] {
        Some(g) => g.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.shape(), b.shape());
    Matrix::from_vec(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    )
}

fn map_matrix(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix::from_vec(m.rows(), m.cols(), m.data().iter().map(|&x| f(x)).collect())
}
