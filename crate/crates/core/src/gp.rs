//! Gaussian-process interpolation of ODE coefficients over parameter space.
//!
//! Each scalar coefficient gets its own zero-mean GP with an ARD RBF kernel.
//! Inputs are min-max scaled to `[0, 1]^d` using the training set and targets
//! are standardized, so hyperparameters live on comparable scales. Kernel
//! hyperparameters are tuned by bounded gradient ascent on the log marginal
//! likelihood from several starting points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::ParameterVector;
use crate::linalg::{cholesky, dot, CholeskyFactor, Matrix};
use crate::sindy::CoefficientTensor;

pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-2, 1e2);
pub const SIGNAL_VARIANCE_BOUNDS: (f64, f64) = (1e-4, 1e2);
pub const NOISE_VARIANCE_BOUNDS: (f64, f64) = (1e-8, 1e-1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfKernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl RbfKernelParams {
    pub fn isotropic(signal_variance: f64, lengthscale: f64, noise_variance: f64, dim: usize) -> Self {
        RbfKernelParams { signal_variance, lengthscales: vec![lengthscale; dim], noise_variance }
    }

    /// `[ln σ_f², ln ℓ_1, …, ln ℓ_d, ln σ_n²]`
    fn to_log(&self) -> Vec<f64> {
        let mut v = vec![self.signal_variance.ln()];
        v.extend(self.lengthscales.iter().map(|l| l.ln()));
        v.push(self.noise_variance.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        RbfKernelParams {
            signal_variance: v[0].exp(),
            lengthscales: v[1..=d].iter().map(|x| x.exp()).collect(),
            noise_variance: v[d + 1].exp(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.lengthscales.len() != dim {
            return Err(Error::shape(format!("{} lengthscales for {dim} inputs", self.lengthscales.len())));
        }
        let ok = self.signal_variance > 0.0
            && self.noise_variance > 0.0
            && self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite());
        if !ok {
            return Err(Error::Parameter(format!("kernel hyperparameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// `σ_f²·exp(−½ Σ_d (x1_d − x2_d)²/ℓ_d²)`
pub fn rbf_kernel(x1: &[f64], x2: &[f64], params: &RbfKernelParams) -> f64 {
    let r2: f64 = x1
        .iter()
        .zip(x2)
        .zip(&params.lengthscales)
        .map(|((a, b), l)| {
            let d = (a - b) / l;
            d * d
        })
        .sum();
    params.signal_variance * (-0.5 * r2).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpFitOptions {
    pub restarts: usize,
    pub iterations: usize,
    pub step: f64,
    /// Holds the noise variance at this value instead of optimizing it.
    pub fixed_noise: Option<f64>,
    pub seed: u64,
}

impl Default for GpFitOptions {
    fn default() -> Self {
        GpFitOptions { restarts: 5, iterations: 200, step: 0.05, fixed_noise: None, seed: 0 }
    }
}

/// Min-max scaling of parameter vectors to the unit box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputScaling {
    pub fn from_points(points: &[ParameterVector]) -> Result<Self> {
        let dim = points.first().map_or(0, ParameterVector::dim);
        if dim == 0 {
            return Err(Error::DegenerateData("no training inputs".into()));
        }
        if points.iter().any(|p| p.dim() != dim) {
            return Err(Error::shape("training inputs of differing dimension"));
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in points {
            for (d, &v) in p.values().iter().enumerate() {
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
        }
        Ok(InputScaling { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&lo, &hi))| if hi > lo { (v - lo) / (hi - lo) } else { v - lo })
            .collect()
    }
}

/// Fitted GP for one scalar target.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: RbfKernelParams,
    scaling: InputScaling,
    /// Normalized inputs, one per row.
    train_inputs: Matrix,
    /// Standardized targets.
    train_targets: Vec<f64>,
    target_mean: f64,
    target_std: f64,
    degenerate: bool,
    chol: Option<CholeskyFactor>,
    alpha: Vec<f64>,
}

fn kernel_matrix(x: &Matrix, params: &RbfKernelParams) -> Matrix {
    let n = x.rows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = rbf_kernel(x.row(i), x.row(j), params);
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

fn factorize(x: &Matrix, params: &RbfKernelParams) -> Result<CholeskyFactor> {
    let mut k = kernel_matrix(x, params);
    k.add_diagonal(params.noise_variance);
    cholesky(&k, 0.0).or_else(|_| cholesky(&k, 1e-10))
}

/// Log marginal likelihood and its gradient with respect to the log
/// hyperparameters `[ln σ_f², ln ℓ…, ln σ_n²]`.
fn lml_with_gradient(x: &Matrix, y: &[f64], params: &RbfKernelParams) -> Result<(f64, Vec<f64>)> {
    let n = x.rows();
    let d = x.cols();
    let kf = kernel_matrix(x, params);
    let mut ky = kf.clone();
    ky.add_diagonal(params.noise_variance);
    let chol = cholesky(&ky, 0.0).or_else(|_| cholesky(&ky, 1e-10))?;
    let alpha = chol.solve_vec(y)?;
    let lml = -0.5 * dot(y, &alpha) - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    let inv = chol.inverse();
    // W = ααᵀ − K⁻¹, gradient component = ½ Σ_ij W_ij ∂K_ij
    let w = |i: usize, j: usize| alpha[i] * alpha[j] - inv.get(i, j);
    let mut grad = vec![0.0; d + 2];
    for i in 0..n {
        for j in 0..n {
            let wij = w(i, j);
            let kij = kf.get(i, j);
            grad[0] += 0.5 * wij * kij;
            for dim in 0..d {
                let delta = (x.get(i, dim) - x.get(j, dim)) / params.lengthscales[dim];
                grad[1 + dim] += 0.5 * wij * kij * delta * delta;
            }
        }
        grad[d + 1] += 0.5 * w(i, i) * params.noise_variance;
    }
    Ok((lml, grad))
}

fn log_bounds(dim: usize) -> Vec<(f64, f64)> {
    let mut b = vec![(SIGNAL_VARIANCE_BOUNDS.0.ln(), SIGNAL_VARIANCE_BOUNDS.1.ln())];
    b.extend(std::iter::repeat_n((LENGTHSCALE_BOUNDS.0.ln(), LENGTHSCALE_BOUNDS.1.ln()), dim));
    b.push((NOISE_VARIANCE_BOUNDS.0.ln(), NOISE_VARIANCE_BOUNDS.1.ln()));
    b
}

impl GpModel {
    /// Builds the posterior for fixed hyperparameters (no optimization).
    pub fn with_kernel(inputs: &[ParameterVector], targets: &[f64], kernel: RbfKernelParams) -> Result<Self> {
        let (scaling, x, y, mean, std, degenerate) = prepare(inputs, targets)?;
        kernel.validate(scaling.dim())?;
        Self::assemble(kernel, scaling, x, y, mean, std, degenerate)
    }

    fn assemble(
        kernel: RbfKernelParams,
        scaling: InputScaling,
        x: Matrix,
        y: Vec<f64>,
        target_mean: f64,
        target_std: f64,
        degenerate: bool,
    ) -> Result<Self> {
        let (chol, alpha) = if degenerate {
            (None, vec![0.0; y.len()])
        } else {
            let chol = factorize(&x, &kernel)?;
            let alpha = chol.solve_vec(&y)?;
            (Some(chol), alpha)
        };
        Ok(GpModel {
            kernel,
            scaling,
            train_inputs: x,
            train_targets: y,
            target_mean,
            target_std,
            degenerate,
            chol,
            alpha,
        })
    }

    /// Fits hyperparameters by multistart gradient ascent on the log marginal likelihood.
    pub fn fit(inputs: &[ParameterVector], targets: &[f64], opts: &GpFitOptions) -> Result<Self> {
        let (scaling, x, y, mean, std, degenerate) = prepare(inputs, targets)?;
        let dim = scaling.dim();
        let noise0 = opts.fixed_noise.unwrap_or(1e-4);
        if let Some(n) = opts.fixed_noise {
            if !(n > 0.0) {
                return Err(Error::Parameter(format!("fixed noise variance must be positive, got {n}")));
            }
        }
        if degenerate {
            let kernel = RbfKernelParams::isotropic(1.0, 1.0, noise0, dim);
            return Self::assemble(kernel, scaling, x, y, mean, std, true);
        }

        let bounds = log_bounds(dim);
        let noise_slot = dim + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for restart in 0..opts.restarts.max(1) {
            let mut theta = if restart == 0 {
                RbfKernelParams::isotropic(1.0, 0.5, noise0, dim).to_log()
            } else {
                let mut t = vec![rng.gen_range(0.1f64.ln()..10f64.ln())];
                t.extend((0..dim).map(|_| rng.gen_range(0.1f64.ln()..3f64.ln())));
                t.push(rng.gen_range(1e-6f64.ln()..1e-2f64.ln()));
                t
            };
            if opts.fixed_noise.is_some() {
                theta[noise_slot] = noise0.ln();
            }
            for (v, &(lo, hi)) in theta.iter_mut().zip(&bounds) {
                *v = v.clamp(lo, hi);
            }
            for _ in 0..=opts.iterations {
                let Ok((lml, mut grad)) = lml_with_gradient(&x, &y, &RbfKernelParams::from_log(&theta)) else {
                    break;
                };
                if !lml.is_finite() {
                    break;
                }
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((lml, theta.clone()));
                }
                if opts.fixed_noise.is_some() {
                    grad[noise_slot] = 0.0;
                }
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                let scale = opts.step / norm.max(1.0);
                for ((v, g), &(lo, hi)) in theta.iter_mut().zip(&grad).zip(&bounds) {
                    *v = (*v + scale * g).clamp(lo, hi);
                }
            }
        }
        let (_, theta) = best.ok_or(Error::NotPositiveDefinite { row: 0, pivot: f64::NAN, jitter: 1e-10 })?;
        let mut kernel = RbfKernelParams::from_log(&theta);
        if let Some(n) = opts.fixed_noise {
            kernel.noise_variance = n;
        }
        Self::assemble(kernel, scaling, x, y, mean, std, false)
    }

    pub fn kernel(&self) -> &RbfKernelParams {
        &self.kernel
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    pub fn target_std(&self) -> f64 {
        self.target_std
    }

    pub fn num_train(&self) -> usize {
        self.train_targets.len()
    }

    /// Log marginal likelihood of the standardized targets.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        if self.degenerate {
            return Ok(f64::NAN);
        }
        Ok(lml_with_gradient(&self.train_inputs, &self.train_targets, &self.kernel)?.0)
    }

    /// Log marginal likelihood of this model's data under other hyperparameters.
    pub fn log_marginal_likelihood_at(&self, kernel: &RbfKernelParams) -> Result<f64> {
        Ok(lml_with_gradient(&self.train_inputs, &self.train_targets, kernel)?.0)
    }

    /// Predictive mean and standard deviation in standardized target units.
    pub fn predict_standardized(&self, mu: &[f64]) -> Result<(f64, f64)> {
        if mu.len() != self.scaling.dim() {
            return Err(Error::shape(format!("query has {} parameters, model {}", mu.len(), self.scaling.dim())));
        }
        let Some(chol) = &self.chol else {
            return Ok((0.0, 0.0));
        };
        let xs = self.scaling.apply(mu);
        let kstar: Vec<f64> = (0..self.train_inputs.rows())
            .map(|i| rbf_kernel(self.train_inputs.row(i), &xs, &self.kernel))
            .collect();
        let mean = dot(&kstar, &self.alpha);
        let v = chol.forward_substitute(&kstar);
        let var = self.kernel.signal_variance + self.kernel.noise_variance - dot(&v, &v);
        Ok((mean, var.max(0.0).sqrt()))
    }

    /// Predictive mean and standard deviation in the original target units.
    pub fn predict(&self, mu: &[f64]) -> Result<(f64, f64)> {
        let (m, s) = self.predict_standardized(mu)?;
        Ok((self.target_mean + self.target_std * m, self.target_std * s))
    }
}

type Prepared = (InputScaling, Matrix, Vec<f64>, f64, f64, bool);

fn prepare(inputs: &[ParameterVector], targets: &[f64]) -> Result<Prepared> {
    if inputs.len() != targets.len() {
        return Err(Error::shape(format!("{} inputs vs {} targets", inputs.len(), targets.len())));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numeric("GP training target".into()));
    }
    let scaling = InputScaling::from_points(inputs)?;
    let distinct = inputs.iter().any(|p| p != &inputs[0]);
    if !distinct {
        return Err(Error::DegenerateData("GP needs at least two distinct training inputs".into()));
    }
    let dim = scaling.dim();
    let mut x = Matrix::zeros(inputs.len(), dim);
    for (i, p) in inputs.iter().enumerate() {
        x.row_mut(i).copy_from_slice(&scaling.apply(p.values()));
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let degenerate = std == 0.0 || std <= 1e-12 * mean.abs();
    let (std, y) = if degenerate {
        (1.0, vec![0.0; targets.len()])
    } else {
        (std, targets.iter().map(|t| (t - mean) / std).collect())
    };
    Ok((scaling, x, y, mean, std, degenerate))
}

/// One GP per coefficient `(j, k)`, all trained on the same parameter set.
#[derive(Debug, Clone)]
pub struct GpCoefficientSurrogate {
    inputs: Vec<ParameterVector>,
    latent_dim: usize,
    num_terms: usize,
    models: Vec<GpModel>,
}

impl GpCoefficientSurrogate {
    /// Fits every coefficient independently. Model `(j, k)` is seeded with
    /// `seed + j·N_l + k`.
    pub fn fit_all(xi: &CoefficientTensor, params: &[ParameterVector], opts: &GpFitOptions) -> Result<Self> {
        if xi.len() != params.len() {
            return Err(Error::shape(format!("{} coefficient slices for {} parameters", xi.len(), params.len())));
        }
        let (nz, nl) = (xi.latent_dim(), xi.num_terms());
        let models = (0..nz * nl)
            .into_par_iter()
            .map(|idx| {
                let (j, k) = (idx / nl, idx % nl);
                let targets = xi.coefficient_series(j, k);
                let o = GpFitOptions { seed: opts.seed.wrapping_add(idx as u64), ..opts.clone() };
                GpModel::fit(params, &targets, &o)
                    .map_err(|e| Error::Coefficient { latent: j, term: k, source: Box::new(e) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GpCoefficientSurrogate { inputs: params.to_vec(), latent_dim: nz, num_terms: nl, models })
    }

    /// Rebuilds a surrogate from stored hyperparameters and training data.
    pub fn from_kernels(
        xi: &CoefficientTensor,
        params: &[ParameterVector],
        kernels: &[RbfKernelParams],
    ) -> Result<Self> {
        let (nz, nl) = (xi.latent_dim(), xi.num_terms());
        if kernels.len() != nz * nl || xi.len() != params.len() {
            return Err(Error::shape(format!("{} kernels for {nz}x{nl} coefficients", kernels.len())));
        }
        let models = kernels
            .iter()
            .enumerate()
            .map(|(idx, k)| {
                let (j, t) = (idx / nl, idx % nl);
                GpModel::with_kernel(params, &xi.coefficient_series(j, t), k.clone())
                    .map_err(|e| Error::Coefficient { latent: j, term: t, source: Box::new(e) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GpCoefficientSurrogate { inputs: params.to_vec(), latent_dim: nz, num_terms: nl, models })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn num_terms(&self) -> usize {
        self.num_terms
    }

    pub fn inputs(&self) -> &[ParameterVector] {
        &self.inputs
    }

    pub fn models(&self) -> &[GpModel] {
        &self.models
    }

    pub fn model(&self, j: usize, k: usize) -> &GpModel {
        &self.models[j * self.num_terms + k]
    }

    pub fn is_fitted(&self) -> bool {
        !self.models.is_empty()
    }

    /// Predictive means and standard deviations, each `N_z × N_l`.
    pub fn predict(&self, mu: &ParameterVector) -> Result<(Matrix, Matrix)> {
        if !self.is_fitted() {
            return Err(Error::State("coefficient surrogate has not been fitted".into()));
        }
        let mut mean = Matrix::zeros(self.latent_dim, self.num_terms);
        let mut std = Matrix::zeros(self.latent_dim, self.num_terms);
        for (idx, m) in self.models.iter().enumerate() {
            let (v, s) = m.predict(mu.values())?;
            mean.data_mut()[idx] = v;
            std.data_mut()[idx] = s;
        }
        Ok((mean, std))
    }
}
