//! ROM prediction with uncertainty: sample coefficient sets from the GP
//! posteriors, integrate each latent ODE from the encoded initial condition,
//! decode, and reduce the ensemble to a mean and a variance field.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fom::{ParameterVector, SpaceTimeGrid};
use crate::gp::GpCoefficientSurrogate;
use crate::linalg::Matrix;
use crate::nn::Autoencoder;
use crate::sindy::SindyLibrary;

/// Draws `n_s` coefficient matrices at `mu_star`, each entry independently
/// from its GP predictive normal. A single sample is the predictive mean.
pub fn sample_coefficients(
    surrogate: &GpCoefficientSurrogate,
    mu_star: &ParameterVector,
    n_s: usize,
    seed: u64,
) -> Result<Vec<Matrix>> {
    if n_s == 0 {
        return Err(Error::Parameter("sample count must be at least 1".into()));
    }
    let (mean, std) = surrogate.predict(mu_star)?;
    if n_s == 1 {
        return Ok(vec![mean]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_s)
        .map(|_| {
            let mut m = mean.clone();
            for (v, s) in m.data_mut().iter_mut().zip(std.data()) {
                let eps: f64 = StandardNormal.sample(&mut rng);
                *v += s * eps;
            }
            m
        })
        .collect())
}

/// Forward Euler: `z_{n+1} = z_n + dt·Θ(z_n)·ξᵀ`.
pub fn integrate_latent(xi: &Matrix, z0: &[f64], n_t: usize, dt: f64, library: &SindyLibrary) -> Result<Matrix> {
    if z0.len() != library.latent_dim || xi.shape() != (library.latent_dim, library.num_terms()) {
        return Err(Error::shape(format!(
            "latent state of length {} with coefficients {:?}",
            z0.len(),
            xi.shape()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    let nz = z0.len();
    let mut z = Matrix::zeros(n_t + 1, nz);
    z.row_mut(0).copy_from_slice(z0);
    let mut rate = vec![0.0; nz];
    for n in 0..n_t {
        library.apply(xi, z.row(n), &mut rate);
        let (prev, next) = z.data_mut().split_at_mut((n + 1) * nz);
        let cur = &prev[n * nz..];
        for ((nx, c), r) in next[..nz].iter_mut().zip(cur).zip(&rate) {
            *nx = c + dt * r;
        }
        if next[..nz].iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: n + 1, context: "latent integration".into() });
        }
    }
    Ok(z)
}

pub fn encode_initial_condition(ae: &Autoencoder, u0: &[f64]) -> Result<Vec<f64>> {
    Ok(ae.encode(&Matrix::row_vector(u0))?.into_vec())
}

/// Per-entry mean and unbiased variance over equally shaped samples.
pub fn ensemble_statistics(samples: &[Matrix]) -> Result<(Matrix, Matrix)> {
    let first = samples.first().ok_or_else(|| Error::State("empty ensemble".into()))?;
    let (r, c) = first.shape();
    let mut mean = Matrix::zeros(r, c);
    let mut m2 = Matrix::zeros(r, c);
    for (k, s) in samples.iter().enumerate() {
        if s.shape() != (r, c) {
            return Err(Error::shape("ensemble members differ in shape"));
        }
        let count = (k + 1) as f64;
        for ((mu, acc), &x) in mean.data_mut().iter_mut().zip(m2.data_mut()).zip(s.data()) {
            let delta = x - *mu;
            *mu += delta / count;
            *acc += delta * (x - *mu);
        }
    }
    let var = if samples.len() > 1 {
        let d = (samples.len() - 1) as f64;
        m2.map(|v| (v / d).max(0.0))
    } else {
        Matrix::zeros(r, c)
    };
    Ok((mean, var))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomPrediction {
    pub mean: Matrix,
    pub variance: Matrix,
    pub max_std: f64,
    pub mu_star: ParameterVector,
    /// Sample indices dropped because their latent trajectory diverged.
    pub diverged: Vec<usize>,
}

/// Decoder, latent library and coefficient surrogate bundled for prediction.
#[derive(Debug, Clone, Copy)]
pub struct RomPredictor<'a> {
    pub ae: &'a Autoencoder,
    pub surrogate: &'a GpCoefficientSurrogate,
    pub library: SindyLibrary,
}

impl<'a> RomPredictor<'a> {
    pub fn new(ae: &'a Autoencoder, surrogate: &'a GpCoefficientSurrogate, library: SindyLibrary) -> Self {
        RomPredictor { ae, surrogate, library }
    }

    pub fn predict(
        &self,
        mu_star: &ParameterVector,
        u0: &[f64],
        grid: &SpaceTimeGrid,
        n_s: usize,
        seed: u64,
    ) -> Result<RomPrediction> {
        if u0.len() != self.ae.field_dim() {
            return Err(Error::shape(format!("initial field of length {}, expected {}", u0.len(), self.ae.field_dim())));
        }
        let z0 = encode_initial_condition(self.ae, u0)?;
        let xis = sample_coefficients(self.surrogate, mu_star, n_s, seed)?;
        let dt = grid.dt();
        let decoded: Vec<Result<Matrix>> = xis
            .par_iter()
            .map(|xi| {
                let z = integrate_latent(xi, &z0, grid.n_t, dt, &self.library)?;
                self.ae.decode(&z)
            })
            .collect();

        let mut ok = Vec::with_capacity(decoded.len());
        let mut diverged = Vec::new();
        let mut last_err = None;
        for (d, r) in decoded.into_iter().enumerate() {
            match r {
                Ok(u) => ok.push(u),
                Err(e @ (Error::Divergence { .. } | Error::Numeric(_))) => {
                    log::warn!("ROM sample {d} at {mu_star} dropped: {e}");
                    diverged.push(d);
                    last_err = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        if ok.is_empty() || (!diverged.is_empty() && ok.len() < 2) {
            return Err(last_err.unwrap_or_else(|| Error::State("no ROM samples".into())));
        }
        let (mean, variance) = ensemble_statistics(&ok)?;
        let max_std = variance.data().iter().fold(0.0f64, |m, v| m.max(*v)).sqrt();
        Ok(RomPrediction { mean, variance, max_std, mu_star: mu_star.clone(), diverged })
    }
}

/// Largest per-time-step relative L2 error of `pred` against `truth`.
pub fn max_relative_error(truth: &Matrix, pred: &Matrix) -> Result<f64> {
    if truth.shape() != pred.shape() {
        return Err(Error::shape(format!("truth {:?} vs prediction {:?}", truth.shape(), pred.shape())));
    }
    let mut worst = 0.0f64;
    for n in 0..truth.rows() {
        let t = truth.row(n);
        let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::UndefinedMetric(format!("reference row {n} has zero norm")));
        }
        let diff = t.iter().zip(pred.row(n)).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
        worst = worst.max(diff / norm);
    }
    Ok(worst)
}
