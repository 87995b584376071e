//! Fully connected softplus networks, reverse-mode gradients and Adam.
//!
//! Hidden layers use softplus; the last layer of every network is affine.
//! Weight matrices are stored `out × in`, so a batch `X` (one sample per row)
//! maps to `X·Wᵀ + b`.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`], the logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`MlpParams::forward_recorded`] for a later
/// [`MlpParams::backward`].
#[derive(Debug, Clone, Default)]
pub struct GradientTape {
    layer_inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        !self.layer_inputs.is_empty()
    }

    pub fn clear(&mut self) {
        self.layer_inputs.clear();
        self.pre_activations.clear();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    /// Gradient with respect to the network input batch.
    pub input: Matrix,
}

impl MlpGradients {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
    }
}

impl MlpParams {
    /// Xavier-uniform weights, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "a network needs at least an input and an output size, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {layer_sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpParams { layer_sizes: layer_sizes.to_vec(), weights, biases })
    }

    pub fn from_parts(weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Config("weights and biases must be non-empty and paired".into()));
        }
        let mut layer_sizes = vec![weights[0].cols()];
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != *layer_sizes.last().unwrap() || b.len() != w.rows() {
                return Err(Error::shape(format!("layer {k}: weight {:?}, bias {}", w.shape(), b.len())));
            }
            layer_sizes.push(w.rows());
        }
        Ok(MlpParams { layer_sizes, weights, biases })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.flatten_into(&mut v);
        v
    }

    /// Overwrites all parameters from the front of `flat`, returning how many
    /// values were consumed.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<usize> {
        let n = self.num_params();
        if flat.len() < n {
            return Err(Error::shape(format!("need {n} parameters, got {}", flat.len())));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let len = w.data().len();
            w.data_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
            let blen = b.len();
            b.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
        Ok(off)
    }

    fn affine(&self, k: usize, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul_transb(&self.weights[k])?;
        let b = &self.biases[k];
        for i in 0..z.rows() {
            for (v, bv) in z.row_mut(i).iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(z)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_size() {
            return Err(Error::shape(format!(
                "network expects {} inputs, batch has {} columns",
                self.input_size(),
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let last = self.weights.len() - 1;
        let mut a = x.clone();
        for k in 0..=last {
            let z = self.affine(k, &a)?;
            a = if k < last { z.map(softplus) } else { z };
        }
        if !a.is_finite() {
            return Err(Error::Numeric("network output".into()));
        }
        Ok(a)
    }

    /// Forward pass that records what [`backward`](Self::backward) needs.
    pub fn forward_recorded(&self, x: &Matrix, tape: &mut GradientTape) -> Result<Matrix> {
        self.check_input(x)?;
        tape.clear();
        let last = self.weights.len() - 1;
        let mut a = x.clone();
        for k in 0..=last {
            let z = self.affine(k, &a)?;
            tape.layer_inputs.push(a);
            if k < last {
                a = z.map(softplus);
                tape.pre_activations.push(z);
            } else {
                a = z;
            }
        }
        if !a.is_finite() {
            tape.clear();
            return Err(Error::Numeric("network output".into()));
        }
        Ok(a)
    }

    pub fn backward(&self, tape: &GradientTape, grad_output: &Matrix) -> Result<MlpGradients> {
        self.backward_impl(tape, grad_output, true)
    }

    /// Like [`backward`](Self::backward) but leaves `input` empty (0×0).
    pub fn backward_params(&self, tape: &GradientTape, grad_output: &Matrix) -> Result<MlpGradients> {
        self.backward_impl(tape, grad_output, false)
    }

    fn backward_impl(&self, tape: &GradientTape, grad_output: &Matrix, want_input: bool) -> Result<MlpGradients> {
        if !tape.is_recorded() {
            return Err(Error::State("backward called before forward".into()));
        }
        if tape.layer_inputs.len() != self.weights.len() {
            return Err(Error::State("tape was recorded by a different network".into()));
        }
        let batch = tape.layer_inputs[0].rows();
        if grad_output.shape() != (batch, self.output_size()) {
            return Err(Error::shape(format!(
                "output gradient {:?}, expected {:?}",
                grad_output.shape(),
                (batch, self.output_size())
            )));
        }
        let n = self.weights.len();
        let mut gw = vec![Matrix::zeros(0, 0); n];
        let mut gb = vec![Vec::new(); n];
        let mut g = grad_output.clone();
        for k in (0..n).rev() {
            if k < n - 1 {
                let z = &tape.pre_activations[k];
                for (gv, &zv) in g.data_mut().iter_mut().zip(z.data()) {
                    *gv *= sigmoid(zv);
                }
            }
            gw[k] = g.matmul_transa(&tape.layer_inputs[k])?;
            let mut bsum = vec![0.0; g.cols()];
            for i in 0..g.rows() {
                for (s, v) in bsum.iter_mut().zip(g.row(i)) {
                    *s += v;
                }
            }
            gb[k] = bsum;
            if k > 0 || want_input {
                g = g.matmul(&self.weights[k])?;
            } else {
                g = Matrix::zeros(0, 0);
            }
        }
        Ok(MlpGradients { weights: gw, biases: gb, input: g })
    }
}

/// Encoder/decoder pair sharing a latent width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    latent_dim: usize,
}

impl Autoencoder {
    /// Encoder `n_u → hidden… → n_z`, decoder mirrored.
    pub fn new(n_u: usize, hidden: &[usize], latent_dim: usize, seed: u64) -> Result<Self> {
        let mut enc_sizes = vec![n_u];
        enc_sizes.extend_from_slice(hidden);
        enc_sizes.push(latent_dim);
        let dec_sizes: Vec<usize> = enc_sizes.iter().rev().copied().collect();
        let encoder = MlpParams::init(&enc_sizes, seed)?;
        let decoder = MlpParams::init(&dec_sizes, seed.wrapping_add(0x9E37_79B9_7F4A_7C15))?;
        Self::from_parts(encoder, decoder)
    }

    pub fn from_parts(encoder: MlpParams, decoder: MlpParams) -> Result<Self> {
        let latent_dim = encoder.output_size();
        if decoder.input_size() != latent_dim || decoder.output_size() != encoder.input_size() {
            return Err(Error::shape(format!(
                "encoder {:?} and decoder {:?} do not compose",
                encoder.layer_sizes(),
                decoder.layer_sizes()
            )));
        }
        if latent_dim >= encoder.input_size() {
            return Err(Error::Config(format!(
                "latent dimension {latent_dim} must be smaller than the field size {}",
                encoder.input_size()
            )));
        }
        Ok(Autoencoder { encoder, decoder, latent_dim })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn field_dim(&self) -> usize {
        self.encoder.input_size()
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params()
    }

    pub fn encode(&self, u: &Matrix) -> Result<Matrix> {
        self.encoder.forward(u)
    }

    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.decoder.forward(z)
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        AdamState {
            step: 0,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// Appends zero moments for `n` newly added parameters.
    pub fn extend(&mut self, n: usize) {
        self.first_moment.resize(self.first_moment.len() + n, 0.0);
        self.second_moment.resize(self.second_moment.len() + n, 0.0);
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.len() || grads.len() != self.len() {
            return Err(Error::shape(format!(
                "adam: state {} vs params {} vs grads {}",
                self.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            let m = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            params[i] -= self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}
