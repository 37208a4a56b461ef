//! The full learned object: normalizer, SVD embedding, residual
//! encoder/decoder nets and the stable generator.
//!
//! Encoding of a normalized state z is Phi(z) = enc_net(z) + z Lambda V_D:
//! the linear skip projects the raw centered state (z Lambda = x - mean)
//! onto the SVD basis, and the network learns only the residual. Decoding
//! mirrors it: Psi(phi) = dec_net(phi) + phi V_D^T Lambda^{-1}.

use super::normalizer::Normalizer;
use super::stable::StableKoopman;
use crate::autodiff::{FeedForwardNet, NetVars, Tape, Var};
use crate::data::{DiffDataset, TrajDataset};
use crate::error::{CoreError, Result};
use crate::linalg::{eigen_decomposition, eigenvalues, thin_svd, ComplexSpectrum, Matrix};
use num_complex::Complex64;
use rand::Rng;

/// Initialization stddev for the residual networks; small so the SVD skip
/// path dominates at the start of training.
pub const INIT_WEIGHT_STDDEV: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct KoopmanModel {
    encoder: FeedForwardNet,
    decoder: FeedForwardNet,
    v_d: Matrix,
    stable: StableKoopman,
    normalizer: Normalizer,
}

/// Which parameters a tape program treats as trainable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    All,
    /// Only sigma and zeta; network weights stay constant.
    OperatorOnly,
}

/// Tape handles for a model's parameters plus the assembled generator.
pub struct ModelVars {
    pub enc: NetVars,
    pub dec: NetVars,
    pub sigma: Var,
    pub zeta: Var,
    pub k: Var,
    pub(crate) enc_skip: Var,
    pub(crate) dec_skip: Var,
}

/// Identifies one parameter group within the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    EncoderWeight(usize),
    EncoderBias(usize),
    DecoderWeight(usize),
    DecoderBias(usize),
    Sigma,
    Zeta,
}

#[derive(Clone, Copy, Debug)]
pub struct ParamGroup {
    pub kind: ParamKind,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamGroup {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True for network weight matrices (the groups subject to weight
    /// decay).
    pub fn is_net_weight(&self) -> bool {
        matches!(
            self.kind,
            ParamKind::EncoderWeight(_) | ParamKind::DecoderWeight(_)
        )
    }
}

/// Eigenvalues of K with the corresponding eigenfunction values on a set of
/// states: `fields[j][m]` is eigenfunction j at state row m. Entries are
/// sorted by descending real part of the eigenvalue.
pub struct EigenFields {
    pub spectrum: ComplexSpectrum,
    pub fields: Vec<Vec<Complex64>>,
}

impl KoopmanModel {
    pub fn new(
        encoder: FeedForwardNet,
        decoder: FeedForwardNet,
        v_d: Matrix,
        stable: StableKoopman,
        normalizer: Normalizer,
    ) -> Result<Self> {
        let n = normalizer.dim();
        let d = stable.dim();
        if encoder.input_dim() != n || encoder.output_dim() != d {
            return Err(CoreError::DimensionMismatch(format!(
                "encoder maps {} -> {}, expected {} -> {}",
                encoder.input_dim(),
                encoder.output_dim(),
                n,
                d
            )));
        }
        if decoder.input_dim() != d || decoder.output_dim() != n {
            return Err(CoreError::DimensionMismatch(format!(
                "decoder maps {} -> {}, expected {} -> {}",
                decoder.input_dim(),
                decoder.output_dim(),
                d,
                n
            )));
        }
        if v_d.shape() != (n, d) {
            return Err(CoreError::DimensionMismatch(format!(
                "embedding is {:?}, expected ({}, {})",
                v_d.shape(),
                n,
                d
            )));
        }
        if !v_d.is_finite() {
            return Err(CoreError::NonFinite("SVD embedding".into()));
        }
        // non-padded columns must be orthonormal
        for a in 0..d {
            let na: f64 = (0..n).map(|i| v_d.get(i, a) * v_d.get(i, a)).sum();
            if na == 0.0 {
                continue;
            }
            for b in a..d {
                let dot: f64 = (0..n).map(|i| v_d.get(i, a) * v_d.get(i, b)).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-8 {
                    return Err(CoreError::Domain(format!(
                        "embedding columns {a} and {b} are not orthonormal (dot {dot})"
                    )));
                }
            }
        }
        Ok(KoopmanModel {
            encoder,
            decoder,
            v_d,
            stable,
            normalizer,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.normalizer.dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.stable.dim()
    }

    pub fn encoder(&self) -> &FeedForwardNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &FeedForwardNet {
        &self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut FeedForwardNet {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut FeedForwardNet {
        &mut self.decoder
    }

    pub fn v_d(&self) -> &Matrix {
        &self.v_d
    }

    pub fn stable(&self) -> &StableKoopman {
        &self.stable
    }

    pub fn stable_mut(&mut self) -> &mut StableKoopman {
        &mut self.stable
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn k_matrix(&self) -> Matrix {
        self.stable.matrix()
    }

    pub fn spectrum(&self) -> Result<ComplexSpectrum> {
        self.stable.spectrum()
    }

    /// N x D linear part of the encoder: diag(scale) V_D.
    pub fn encoder_skip(&self) -> Matrix {
        let scale = self.normalizer.scale();
        Matrix::from_fn(self.state_dim(), self.latent_dim(), |i, j| {
            scale[i] * self.v_d.get(i, j)
        })
    }

    /// D x N linear part of the decoder: V_D^T diag(1/scale).
    pub fn decoder_skip(&self) -> Matrix {
        let scale = self.normalizer.scale();
        Matrix::from_fn(self.latent_dim(), self.state_dim(), |i, j| {
            self.v_d.get(j, i) / scale[j]
        })
    }

    /// Observables of normalized states, one row per sample.
    pub fn encode(&self, z: &Matrix) -> Matrix {
        let mut out = self.encoder.forward(z);
        out.add_assign(&z.matmul(&self.encoder_skip()));
        out
    }

    /// Normalized-state reconstruction from observables.
    pub fn decode(&self, phi: &Matrix) -> Matrix {
        let mut out = self.decoder.forward(phi);
        out.add_assign(&phi.matmul(&self.decoder_skip()));
        out
    }

    /// Encoding together with its directional derivative zdot . grad Phi.
    pub fn encode_jvp(&self, z: &Matrix, zdot: &Matrix) -> (Matrix, Matrix) {
        let (mut out, mut jvp) = self.encoder.forward_jvp(z, zdot);
        let skip = self.encoder_skip();
        out.add_assign(&z.matmul(&skip));
        jvp.add_assign(&zdot.matmul(&skip));
        (out, jvp)
    }

    /// Register parameters on a tape and assemble K.
    pub fn vars(&self, tape: &mut Tape, trainable: Trainable) -> ModelVars {
        let nets_trainable = trainable == Trainable::All;
        let enc = self.encoder.vars_with(tape, nets_trainable);
        let dec = self.decoder.vars_with(tape, nets_trainable);
        let d = self.latent_dim();
        let sigma = tape.leaf(Matrix::from_vec(1, d, self.stable.sigma().to_vec()));
        let zeta = tape.leaf(Matrix::from_vec(1, d - 1, self.stable.zeta().to_vec()));
        let k = tape.assemble_tridiag(sigma, zeta);
        let enc_skip = tape.constant(self.encoder_skip());
        let dec_skip = tape.constant(self.decoder_skip());
        ModelVars {
            enc,
            dec,
            sigma,
            zeta,
            k,
            enc_skip,
            dec_skip,
        }
    }

    /// Tape version of `encode`; also returns hidden pre-activations for
    /// tangent propagation.
    pub fn encode_on_tape(&self, tape: &mut Tape, z: Var, vars: &ModelVars) -> (Var, Vec<Var>) {
        let (net_out, preacts) = self.encoder.forward_on_tape(tape, z, &vars.enc);
        let skip = tape.matmul(z, vars.enc_skip);
        (tape.add(net_out, skip), preacts)
    }

    /// Tape version of the encoder directional derivative.
    pub fn encode_jvp_on_tape(
        &self,
        tape: &mut Tape,
        zdot: Var,
        preacts: &[Var],
        vars: &ModelVars,
    ) -> Var {
        let net_jvp = self.encoder.jvp_on_tape(tape, zdot, preacts, &vars.enc);
        let skip = tape.matmul(zdot, vars.enc_skip);
        tape.add(net_jvp, skip)
    }

    /// Tape version of `decode`.
    pub fn decode_on_tape(&self, tape: &mut Tape, phi: Var, vars: &ModelVars) -> Var {
        let (net_out, _) = self.decoder.forward_on_tape(tape, phi, &vars.dec);
        let skip = tape.matmul(phi, vars.dec_skip);
        tape.add(net_out, skip)
    }

    /// Layout of the flat parameter vector: encoder layers, decoder layers,
    /// sigma, zeta; matrices row-major.
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let mut groups = Vec::new();
        let mut offset = 0;
        let mut push = |kind, rows, cols, offset: &mut usize| {
            groups.push(ParamGroup {
                kind,
                offset: *offset,
                rows,
                cols,
            });
            *offset += rows * cols;
        };
        for l in 0..self.encoder.num_layers() {
            let w = self.encoder.weight(l);
            push(ParamKind::EncoderWeight(l), w.rows(), w.cols(), &mut offset);
            push(ParamKind::EncoderBias(l), 1, w.cols(), &mut offset);
        }
        for l in 0..self.decoder.num_layers() {
            let w = self.decoder.weight(l);
            push(ParamKind::DecoderWeight(l), w.rows(), w.cols(), &mut offset);
            push(ParamKind::DecoderBias(l), 1, w.cols(), &mut offset);
        }
        push(ParamKind::Sigma, 1, self.latent_dim(), &mut offset);
        push(ParamKind::Zeta, 1, self.latent_dim() - 1, &mut offset);
        groups
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params() + self.stable.num_params()
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for l in 0..self.encoder.num_layers() {
            flat.extend_from_slice(self.encoder.weight(l).data());
            flat.extend_from_slice(self.encoder.bias(l).data());
        }
        for l in 0..self.decoder.num_layers() {
            flat.extend_from_slice(self.decoder.weight(l).data());
            flat.extend_from_slice(self.decoder.bias(l).data());
        }
        flat.extend_from_slice(self.stable.sigma());
        flat.extend_from_slice(self.stable.zeta());
        flat
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "parameter count mismatch");
        let mut pos = 0;
        let take = |len: usize, pos: &mut usize| {
            let s = &flat[*pos..*pos + len];
            *pos += len;
            s
        };
        for l in 0..self.encoder.num_layers() {
            let len = self.encoder.weight(l).data().len();
            self.encoder
                .weight_mut(l)
                .data_mut()
                .copy_from_slice(take(len, &mut pos));
            let len = self.encoder.bias(l).data().len();
            self.encoder
                .bias_mut(l)
                .data_mut()
                .copy_from_slice(take(len, &mut pos));
        }
        for l in 0..self.decoder.num_layers() {
            let len = self.decoder.weight(l).data().len();
            self.decoder
                .weight_mut(l)
                .data_mut()
                .copy_from_slice(take(len, &mut pos));
            let len = self.decoder.bias(l).data().len();
            self.decoder
                .bias_mut(l)
                .data_mut()
                .copy_from_slice(take(len, &mut pos));
        }
        let d = self.latent_dim();
        self.stable
            .sigma_mut()
            .copy_from_slice(take(d, &mut pos));
        self.stable
            .zeta_mut()
            .copy_from_slice(take(d - 1, &mut pos));
    }

    /// Gradient of a tape program collected into the flat layout.
    pub fn collect_gradients(
        &self,
        tape: &Tape,
        grads: &crate::autodiff::Gradients,
        vars: &ModelVars,
    ) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for l in 0..self.encoder.num_layers() {
            flat.extend_from_slice(grads.of(tape, vars.enc.weights[l]).data());
            flat.extend_from_slice(grads.of(tape, vars.enc.biases[l]).data());
        }
        for l in 0..self.decoder.num_layers() {
            flat.extend_from_slice(grads.of(tape, vars.dec.weights[l]).data());
            flat.extend_from_slice(grads.of(tape, vars.dec.biases[l]).data());
        }
        flat.extend_from_slice(grads.of(tape, vars.sigma).data());
        flat.extend_from_slice(grads.of(tape, vars.zeta).data());
        flat
    }

    /// Eigenvalues of K and eigenfunction values at raw states: with right
    /// eigenvectors K w = lambda w, the scalar observable Phi(z) . w evolves
    /// as e^{lambda t}.
    pub fn eigenfunction_fields(&self, raw_states: &Matrix) -> Result<EigenFields> {
        let (spectrum, vectors) = eigen_decomposition(&self.k_matrix())?;
        let z = self.normalizer.normalize(raw_states);
        let phi = self.encode(&z);
        // sort eigenvalues (and their fields) by descending real part for a
        // reproducible order
        let mut order: Vec<usize> = (0..spectrum.len()).collect();
        order.sort_by(|&a, &b| {
            let (va, vb) = (spectrum.values()[a], spectrum.values()[b]);
            vb.re
                .partial_cmp(&va.re)
                .unwrap()
                .then(va.im.partial_cmp(&vb.im).unwrap())
        });
        let mut fields = Vec::with_capacity(order.len());
        let mut values = Vec::with_capacity(order.len());
        for &j in &order {
            values.push(spectrum.values()[j]);
            let w = &vectors[j];
            let field: Vec<Complex64> = (0..phi.rows())
                .map(|m| {
                    (0..phi.cols())
                        .map(|dd| w[dd] * phi.get(m, dd))
                        .sum::<Complex64>()
                })
                .collect();
            fields.push(field);
        }
        Ok(EigenFields {
            spectrum: ComplexSpectrum::new(values),
            fields,
        })
    }
}

/// Data source for operator initialization.
pub enum DmdData<'a> {
    Trajectories(&'a TrajDataset),
    Derivatives(&'a DiffDataset),
}

/// Build a model with the embedding and generator initialized from the
/// data: V_D from the SVD of centered snapshots, K from the spectrum of a
/// least-squares linear fit in the projected coordinates (one-step operator
/// for trajectory data, derivative regression for derivative data), clamped
/// to the stable half-plane; networks start near zero.
pub fn init_from_dmd(
    data: DmdData,
    latent_dim: usize,
    normalizer: Normalizer,
    enc_widths: &[usize],
    dec_widths: &[usize],
    rng: &mut impl Rng,
) -> Result<KoopmanModel> {
    let n = normalizer.dim();
    if latent_dim == 0 {
        return Err(CoreError::Domain("latent dimension must be >= 1".into()));
    }
    let snapshots = match &data {
        DmdData::Trajectories(ds) => ds.stack_states(),
        DmdData::Derivatives(ds) => ds.states.clone(),
    };
    if snapshots.rows() < 2 {
        return Err(CoreError::Data(format!(
            "need at least 2 snapshots for initialization, got {}",
            snapshots.rows()
        )));
    }
    if snapshots.cols() != n {
        return Err(CoreError::DimensionMismatch(format!(
            "snapshots have width {}, normalizer expects {}",
            snapshots.cols(),
            n
        )));
    }

    let centered = Matrix::from_fn(snapshots.rows(), n, |i, j| {
        snapshots.get(i, j) - normalizer.mean()[j]
    });
    let svd = thin_svd(&centered)?;
    // first latent_dim right-singular vectors, zero-padded when fewer exist
    let v_d = Matrix::from_fn(n, latent_dim, |i, j| {
        if j < svd.v.cols() {
            svd.v.get(i, j)
        } else {
            0.0
        }
    });

    let project = |x: &Matrix| -> Matrix { x.matmul(&v_d) };
    let continuous = match data {
        DmdData::Trajectories(ds) => {
            let mut dt = None;
            for traj in &ds.trajectories {
                let this = traj.uniform_dt().ok_or_else(|| {
                    CoreError::Data("DMD initialization needs uniformly sampled trajectories".into())
                })?;
                match dt {
                    None => dt = Some(this),
                    Some(prev) if (this - prev).abs() > 1e-9 * prev.abs().max(1.0) => {
                        return Err(CoreError::Data(
                            "trajectories have inconsistent sampling intervals".into(),
                        ));
                    }
                    _ => {}
                }
            }
            let dt = dt.ok_or_else(|| CoreError::Data("no trajectory pairs".into()))?;
            // stack one-step pairs (q_t, q_{t+dt}) across trajectories
            let pairs: usize = ds.trajectories.iter().map(|t| t.len() - 1).sum();
            let mut q1 = Matrix::zeros(pairs, latent_dim);
            let mut q2 = Matrix::zeros(pairs, latent_dim);
            let mut r = 0;
            for traj in &ds.trajectories {
                let q = project(&Matrix::from_fn(traj.len(), n, |i, j| {
                    traj.states.get(i, j) - normalizer.mean()[j]
                }));
                for i in 0..traj.len() - 1 {
                    for j in 0..latent_dim {
                        q1.set(r, j, q.get(i, j));
                        q2.set(r, j, q.get(i + 1, j));
                    }
                    r += 1;
                }
            }
            let a = lstsq(&q1, &q2)?;
            let discrete = eigenvalues(&a)?;
            // continuous generator spectrum: log of the one-step
            // eigenvalues over dt; moduli floored so degenerate directions
            // map to fast but finite decay, negative-real eigenvalues map to
            // pure decay (their principal log would break conjugate closure)
            let values: Vec<Complex64> = discrete
                .values()
                .iter()
                .map(|l| {
                    let modulus = l.norm().max(1e-6);
                    let arg = if l.im == 0.0 { 0.0 } else { l.arg() };
                    Complex64::new(modulus.ln() / dt, arg / dt)
                })
                .collect();
            ComplexSpectrum::new(values)
        }
        DmdData::Derivatives(ds) => {
            let q = project(&centered);
            let qdot = project(&ds.derivs);
            let g = lstsq(&q, &qdot)?;
            eigenvalues(&g)?
        }
    };
    // clamp to the closed left half-plane
    let clamped = ComplexSpectrum::new(
        continuous
            .values()
            .iter()
            .map(|l| Complex64::new(l.re.min(0.0), l.im))
            .collect(),
    );
    let stable = StableKoopman::from_spectrum(&clamped)?;

    if enc_widths.first() != Some(&n) || enc_widths.last() != Some(&latent_dim) {
        return Err(CoreError::DimensionMismatch(format!(
            "encoder widths {enc_widths:?} must run {n} -> {latent_dim}"
        )));
    }
    if dec_widths.first() != Some(&latent_dim) || dec_widths.last() != Some(&n) {
        return Err(CoreError::DimensionMismatch(format!(
            "decoder widths {dec_widths:?} must run {latent_dim} -> {n}"
        )));
    }
    let mut encoder = FeedForwardNet::new(enc_widths);
    encoder.init_truncated_normal(INIT_WEIGHT_STDDEV, rng);
    let mut decoder = FeedForwardNet::new(dec_widths);
    decoder.init_truncated_normal(INIT_WEIGHT_STDDEV, rng);

    KoopmanModel::new(encoder, decoder, v_d, stable, normalizer)
}

/// Minimum-norm least squares min_X |A X - B|_F via the thin SVD, dropping
/// directions below 1e-12 of the largest singular value.
fn lstsq(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let svd = thin_svd(a)?;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let ut_b = svd.u.transpose().matmul(b);
    let mut scaled = ut_b;
    for i in 0..scaled.rows() {
        let s = svd.s[i];
        let inv = if s > 1e-12 * smax.max(1.0) { 1.0 / s } else { 0.0 };
        for j in 0..scaled.cols() {
            let v = scaled.get(i, j) * inv;
            scaled.set(i, j, v);
        }
    }
    Ok(svd.v.matmul(&scaled))
}
