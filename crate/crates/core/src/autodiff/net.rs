//! Fully connected networks with swish hidden activations and a linear
//! output layer. Rows are samples, so a forward pass is a chain of
//! right-multiplications, matching the row-vector convention used by the
//! operator model.

use super::tape::{swish, swish_d1, Tape, Var};
use crate::linalg::Matrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Weights enter as `x W + b`; `widths` lists layer sizes from input to
/// output, e.g. `[2, 16, 16, 3]`.
#[derive(Clone, Debug)]
pub struct FeedForwardNet {
    widths: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Matrix>,
}

/// Tape handles for one network's parameters.
pub struct NetVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl FeedForwardNet {
    pub fn new(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "a network needs input and output layers");
        assert!(widths.iter().all(|&w| w > 0), "zero-width layer");
        let weights = (0..widths.len() - 1)
            .map(|l| Matrix::zeros(widths[l], widths[l + 1]))
            .collect();
        let biases = (0..widths.len() - 1)
            .map(|l| Matrix::zeros(1, widths[l + 1]))
            .collect();
        FeedForwardNet {
            widths: widths.to_vec(),
            weights,
            biases,
        }
    }

    /// Weights from a normal truncated at two standard deviations, biases
    /// zero.
    pub fn init_truncated_normal(&mut self, stddev: f64, rng: &mut impl Rng) {
        let normal = Normal::new(0.0, stddev).unwrap();
        for w in &mut self.weights {
            for v in w.data_mut() {
                *v = loop {
                    let draw = normal.sample(rng);
                    if draw.abs() <= 2.0 * stddev {
                        break draw;
                    }
                };
            }
        }
        for b in &mut self.biases {
            for v in b.data_mut() {
                *v = 0.0;
            }
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, l: usize) -> &Matrix {
        &self.weights[l]
    }

    pub fn bias(&self, l: usize) -> &Matrix {
        &self.biases[l]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut Matrix {
        &mut self.weights[l]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut Matrix {
        &mut self.biases[l]
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.data().len() + b.data().len())
            .sum()
    }

    /// Batched forward pass, one sample per row.
    pub fn forward(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.cols(), self.input_dim(), "input width mismatch");
        let mut h = x.clone();
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let mut a = h.matmul(&self.weights[l]);
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    let v = a.get(i, j) + self.biases[l].get(0, j);
                    a.set(i, j, if l == last { v } else { swish(v) });
                }
            }
            h = a;
        }
        h
    }

    /// Forward pass together with the directional derivative along `xdot`
    /// (one tangent row per sample row). The tangent propagates as
    /// u_l = (u_{l-1} W_l) .* swish'(a_l) through hidden layers and passes
    /// the final linear layer unactivated.
    pub fn forward_jvp(&self, x: &Matrix, xdot: &Matrix) -> (Matrix, Matrix) {
        assert_eq!(x.shape(), xdot.shape(), "tangent shape mismatch");
        let mut h = x.clone();
        let mut u = xdot.clone();
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let mut a = h.matmul(&self.weights[l]);
            let mut ua = u.matmul(&self.weights[l]);
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    let pre = a.get(i, j) + self.biases[l].get(0, j);
                    if l == last {
                        a.set(i, j, pre);
                    } else {
                        a.set(i, j, swish(pre));
                        let t = ua.get(i, j) * swish_d1(pre);
                        ua.set(i, j, t);
                    }
                }
            }
            h = a;
            u = ua;
        }
        (h, u)
    }

    /// Jacobian d out / d in at a single input row, shape in_dim x out_dim;
    /// column k is the gradient of output component k.
    pub fn input_jacobian(&self, x: &[f64]) -> Matrix {
        assert_eq!(x.len(), self.input_dim(), "input width mismatch");
        let n_in = self.input_dim();
        let n_out = self.output_dim();
        let mut jac = Matrix::zeros(n_in, n_out);
        // one JVP per input direction; the network is wider than it is deep,
        // so this costs about n_in forward passes
        for k in 0..n_in {
            let xm = Matrix::from_vec(1, n_in, x.to_vec());
            let mut e = Matrix::zeros(1, n_in);
            e.set(0, k, 1.0);
            let (_, jvp) = self.forward_jvp(&xm, &e);
            for j in 0..n_out {
                jac.set(k, j, jvp.get(0, j));
            }
        }
        jac
    }

    /// Register this network's parameters as differentiable leaves.
    pub fn vars(&self, tape: &mut Tape) -> NetVars {
        self.vars_with(tape, true)
    }

    /// As `vars`, but parameters become constants when `trainable` is
    /// false (frozen networks).
    pub fn vars_with(&self, tape: &mut Tape, trainable: bool) -> NetVars {
        let reg = |t: &mut Tape, m: &Matrix| {
            if trainable {
                t.leaf(m.clone())
            } else {
                t.constant(m.clone())
            }
        };
        NetVars {
            weights: self.weights.iter().map(|w| reg(tape, w)).collect(),
            biases: self.biases.iter().map(|b| reg(tape, b)).collect(),
        }
    }

    /// Rebuild a network from serialized pieces, validating shapes.
    pub fn from_parts(
        widths: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Matrix>,
    ) -> crate::error::Result<Self> {
        use crate::error::CoreError;
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(CoreError::Format(format!("bad layer widths {widths:?}")));
        }
        let layers = widths.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(CoreError::Format(format!(
                "expected {layers} weight and bias matrices, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..layers {
            if weights[l].shape() != (widths[l], widths[l + 1]) {
                return Err(CoreError::Format(format!(
                    "layer {l} weights are {:?}, expected ({}, {})",
                    weights[l].shape(),
                    widths[l],
                    widths[l + 1]
                )));
            }
            if biases[l].shape() != (1, widths[l + 1]) {
                return Err(CoreError::Format(format!(
                    "layer {l} biases are {:?}, expected (1, {})",
                    biases[l].shape(),
                    widths[l + 1]
                )));
            }
            if !weights[l].is_finite() || !biases[l].is_finite() {
                return Err(CoreError::NonFinite(format!("layer {l} parameters")));
            }
        }
        Ok(FeedForwardNet {
            widths,
            weights,
            biases,
        })
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Matrix] {
        &self.biases
    }

    /// Forward pass on the tape. Returns the output node and the
    /// pre-activation nodes of the hidden layers (needed to propagate
    /// tangents through the same activation pattern).
    pub fn forward_on_tape(&self, tape: &mut Tape, x: Var, vars: &NetVars) -> (Var, Vec<Var>) {
        let last = self.num_layers() - 1;
        let mut h = x;
        let mut preacts = Vec::with_capacity(last);
        for l in 0..self.num_layers() {
            let z = tape.matmul(h, vars.weights[l]);
            let a = tape.add_row(z, vars.biases[l]);
            if l == last {
                h = a;
            } else {
                preacts.push(a);
                h = tape.swish(a);
            }
        }
        (h, preacts)
    }

    /// Tangent propagation on the tape through pre-activations recorded by
    /// `forward_on_tape`, differentiable in both the tangent and the weights.
    pub fn jvp_on_tape(&self, tape: &mut Tape, xdot: Var, preacts: &[Var], vars: &NetVars) -> Var {
        assert_eq!(preacts.len(), self.num_layers() - 1, "preactivation count");
        let mut u = xdot;
        for l in 0..self.num_layers() {
            u = tape.matmul(u, vars.weights[l]);
            if l < self.num_layers() - 1 {
                let sp = tape.swish_prime(preacts[l]);
                u = tape.elem_mul(u, sp);
            }
        }
        u
    }
}
