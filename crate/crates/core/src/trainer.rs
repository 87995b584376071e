//! Joint autoencoder/latent-ODE training with variance-driven acquisition.
//!
//! The objective is `L_AE + β·L_SINDy`, both mean squared errors, optimized
//! full-batch by a single Adam instance over the encoder, the decoder and every
//! coefficient slice. Every `greedy_interval` epochs (while budget remains) the
//! coefficient GPs are refit, the ROM variance is evaluated on every unsampled
//! grid point, and the full-order model is run at the point whose variance
//! field has the largest entry.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::{FullOrderModel, ParameterGrid, ParameterVector, SnapshotMatrix, SpaceTimeGrid};
use crate::gp::{GpCoefficientSurrogate, GpFitOptions};
use crate::linalg::Matrix;
use crate::nn::{AdamState, Autoencoder, GradientTape};
use crate::rom::RomPredictor;
use crate::sindy::{least_squares_fit, sindy_residual, CoefficientTensor, LatentTrajectory, SindyLibrary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub max_epochs: usize,
    /// Epochs between acquisitions.
    pub greedy_interval: usize,
    pub sindy_weight: f64,
    pub learning_rate: f64,
    /// ROM samples per candidate during acquisition.
    pub n_samples: usize,
    /// Maximum number of acquired full-order runs.
    pub fom_budget: usize,
    /// Set from the run configuration's top-level seed.
    #[serde(skip)]
    pub seed: u64,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub include_constant: bool,
    pub gp_restarts: usize,
    pub gp_iterations: usize,
    pub gp_step: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            max_epochs: 45_000,
            greedy_interval: 3_000,
            sindy_weight: 0.25,
            learning_rate: 1e-4,
            n_samples: 20,
            fom_budget: 6,
            seed: 0,
            latent_dim: 3,
            hidden: vec![64, 16],
            include_constant: false,
            gp_restarts: 5,
            gp_iterations: 200,
            gp_step: 0.05,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::Config(format!("trainer.{field}: {msg}")));
        if self.greedy_interval == 0 {
            return fail("greedy_interval", "must be at least 1".into());
        }
        if self.greedy_interval > self.max_epochs {
            return fail(
                "greedy_interval",
                format!("{} exceeds max_epochs {}", self.greedy_interval, self.max_epochs),
            );
        }
        if !(self.sindy_weight >= 0.0) {
            return fail("sindy_weight", format!("must be non-negative, got {}", self.sindy_weight));
        }
        if !(self.learning_rate >= 0.0) {
            return fail("learning_rate", format!("must be non-negative, got {}", self.learning_rate));
        }
        if self.n_samples == 0 {
            return fail("n_samples", "must be at least 1".into());
        }
        if self.latent_dim == 0 {
            return fail("latent_dim", "must be at least 1".into());
        }
        if self.hidden.contains(&0) {
            return fail("hidden", "layer widths must be positive".into());
        }
        if self.gp_restarts == 0 {
            return fail("gp_restarts", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn library(&self) -> SindyLibrary {
        SindyLibrary { latent_dim: self.latent_dim, include_constant: self.include_constant }
    }

    pub fn gp_options(&self, seed: u64) -> GpFitOptions {
        GpFitOptions {
            restarts: self.gp_restarts,
            iterations: self.gp_iterations,
            step: self.gp_step,
            fixed_noise: None,
            seed,
        }
    }

    /// Epochs at which acquisitions are attempted.
    pub fn acquisition_epochs(&self) -> Vec<usize> {
        (1..)
            .map(|k| k * self.greedy_interval)
            .take_while(|&e| e < self.max_epochs)
            .take(self.fom_budget)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub l_ae: f64,
    pub l_sindy: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub epoch: usize,
    pub mu: ParameterVector,
    pub grid_index: usize,
    pub max_std: f64,
}

/// Objective value and its gradient over `[encoder, decoder, ξ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLoss {
    pub total: f64,
    pub l_ae: f64,
    pub l_sindy: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingState {
    pub epoch: usize,
    pub params: Vec<ParameterVector>,
    pub snapshots: Vec<SnapshotMatrix>,
    pub ae: Autoencoder,
    pub xi: CoefficientTensor,
    pub adam: AdamState,
    pub library: SindyLibrary,
    pub space_time: SpaceTimeGrid,
    pub loss_history: Vec<LossRecord>,
    pub acquisitions: Vec<Acquisition>,
    stacked: Matrix,
    /// Parameters and optimizer state before the latest update.
    previous: Option<(Vec<f64>, AdamState)>,
}

impl TrainingState {
    /// Fresh networks from `config.seed`; coefficient slices are initialized by
    /// least squares on the untrained encoder's latent trajectories.
    pub fn new(config: &TrainerConfig, snapshots: Vec<SnapshotMatrix>) -> Result<Self> {
        let first = snapshots.first().ok_or_else(|| Error::Config("training needs at least one snapshot".into()))?;
        let space_time = first.grid;
        let ae = Autoencoder::new(space_time.n_u, &config.hidden, config.latent_dim, config.seed)?;
        Self::with_autoencoder(config, snapshots, ae)
    }

    pub fn with_autoencoder(config: &TrainerConfig, snapshots: Vec<SnapshotMatrix>, ae: Autoencoder) -> Result<Self> {
        let first = snapshots.first().ok_or_else(|| Error::Config("training needs at least one snapshot".into()))?;
        let space_time = first.grid;
        if snapshots.iter().any(|s| s.grid != space_time || s.u.shape() != (space_time.n_t + 1, space_time.n_u)) {
            return Err(Error::shape("snapshots must share one space-time grid"));
        }
        if ae.field_dim() != space_time.n_u || ae.latent_dim() != config.latent_dim {
            return Err(Error::shape("autoencoder does not match the field size or latent dimension"));
        }
        let library = config.library();
        let mut xi = CoefficientTensor::new(&library);
        for s in &snapshots {
            xi.push(Self::initial_slice(&ae, &library, s)?)?;
        }
        let stacked = Matrix::vstack(&snapshots.iter().map(|s| &s.u).collect::<Vec<_>>())?;
        let adam = AdamState::new(ae.num_params() + xi.num_params(), config.learning_rate);
        Ok(TrainingState {
            epoch: 0,
            params: snapshots.iter().map(|s| s.mu.clone()).collect(),
            snapshots,
            ae,
            xi,
            adam,
            library,
            space_time,
            loss_history: Vec::new(),
            acquisitions: Vec::new(),
            stacked,
            previous: None,
        })
    }

    fn initial_slice(ae: &Autoencoder, library: &SindyLibrary, snap: &SnapshotMatrix) -> Result<Matrix> {
        let z = ae.encode(&snap.u)?;
        least_squares_fit(&LatentTrajectory::new(z, snap.grid.dt())?, library)
    }

    pub fn dataset_len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn num_params(&self) -> usize {
        self.ae.num_params() + self.xi.num_params()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.ae.encoder.flatten_into(&mut v);
        self.ae.decoder.flatten_into(&mut v);
        self.xi.flatten_into(&mut v);
        v
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!("{} parameters, expected {}", flat.len(), self.num_params())));
        }
        let mut off = self.ae.encoder.assign_flat(flat)?;
        off += self.ae.decoder.assign_flat(&flat[off..])?;
        self.xi.assign_flat(&flat[off..])?;
        Ok(())
    }

    /// `L_AE + β·L_SINDy` with exact gradients.
    pub fn joint_loss(&self, sindy_weight: f64) -> Result<JointLoss> {
        let n_mu = self.snapshots.len();
        if n_mu == 0 {
            return Err(Error::State("empty dataset".into()));
        }
        let rows = self.space_time.n_t + 1;
        let dt = self.space_time.dt();

        let mut enc_tape = GradientTape::new();
        let mut dec_tape = GradientTape::new();
        let z = self.ae.encoder.forward_recorded(&self.stacked, &mut enc_tape)?;
        let u_hat = self.ae.decoder.forward_recorded(&z, &mut dec_tape)?;

        let m = self.stacked.data().len() as f64;
        let mut l_ae = 0.0;
        let mut g_out = Matrix::zeros(u_hat.rows(), u_hat.cols());
        for ((g, &p), &t) in g_out.data_mut().iter_mut().zip(u_hat.data()).zip(self.stacked.data()) {
            let r = p - t;
            l_ae += r * r;
            *g = 2.0 * r / m;
        }
        l_ae /= m;
        let mut dec = self.ae.decoder.backward(&dec_tape, &g_out)?;

        let mut g_z = std::mem::replace(&mut dec.input, Matrix::zeros(0, 0));
        let mut l_sindy = 0.0;
        let mut g_xi = Vec::with_capacity(self.xi.num_params());
        let inv_n = 1.0 / n_mu as f64;
        for i in 0..n_mu {
            let traj = LatentTrajectory::new(z.row_block(i * rows, (i + 1) * rows), dt)?;
            let res = sindy_residual(&traj, self.xi.slice(i), &self.library)?;
            l_sindy += res.loss * inv_n;
            let w = sindy_weight * inv_n;
            let nz = z.cols();
            let block = &mut g_z.data_mut()[i * rows * nz..(i + 1) * rows * nz];
            for (g, v) in block.iter_mut().zip(res.grad_z.data()) {
                *g += w * v;
            }
            g_xi.extend(res.grad_xi.data().iter().map(|v| w * v));
        }
        let enc = self.ae.encoder.backward_params(&enc_tape, &g_z)?;

        let total = l_ae + sindy_weight * l_sindy;
        if !total.is_finite() {
            return Err(Error::Divergence { step: self.epoch, context: "non-finite training loss".into() });
        }
        let mut grad = Vec::with_capacity(self.num_params());
        enc.flatten_into(&mut grad);
        dec.flatten_into(&mut grad);
        grad.extend(g_xi);
        Ok(JointLoss { total, l_ae, l_sindy, grad })
    }

    /// One full-batch Adam step.
    ///
    /// A non-finite loss at the current parameters rolls the state back to the
    /// previous epoch, the last one whose loss was finite, before erroring.
    pub fn train_epoch(&mut self, config: &TrainerConfig) -> Result<LossRecord> {
        let loss = match self.joint_loss(config.sindy_weight) {
            Ok(l) if l.grad.iter().all(|g| g.is_finite()) => l,
            Ok(_) => return Err(self.roll_back("non-finite gradient".into())),
            Err(Error::Divergence { context, .. } | Error::Numeric(context)) => return Err(self.roll_back(context)),
            Err(e) => return Err(e),
        };
        let mut flat = self.flat_params();
        let mut adam = self.adam.clone();
        adam.lr = config.learning_rate;
        adam.update(&mut flat, &loss.grad)?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: self.epoch, context: "non-finite parameters".into() });
        }
        let old = std::mem::replace(&mut self.adam, adam);
        self.previous = Some((self.flat_params(), old));
        self.assign_flat(&flat)?;
        self.epoch += 1;
        let record = LossRecord { l_ae: loss.l_ae, l_sindy: loss.l_sindy, total: loss.total };
        self.loss_history.push(record);
        Ok(record)
    }

    fn roll_back(&mut self, context: String) -> Error {
        let step = self.epoch;
        if let Some((flat, adam)) = self.previous.take() {
            if self.assign_flat(&flat).is_ok() {
                self.adam = adam;
                self.epoch -= 1;
                self.loss_history.pop();
            }
        }
        Error::Divergence { step, context }
    }

    /// Appends a snapshot with a least-squares coefficient slice and fresh Adam moments.
    pub fn add_snapshot(&mut self, snap: SnapshotMatrix) -> Result<()> {
        if snap.grid != self.space_time {
            return Err(Error::shape("snapshot grid differs from the training grid"));
        }
        let slice = Self::initial_slice(&self.ae, &self.library, &snap)?;
        let stacked = Matrix::vstack(&[&self.stacked, &snap.u])?;
        self.xi.push(slice)?;
        self.previous = None;
        self.adam.extend(self.library.latent_dim * self.library.num_terms());
        self.stacked = stacked;
        self.params.push(snap.mu.clone());
        self.snapshots.push(snap);
        Ok(())
    }

    pub fn fit_surrogate(&self, opts: &GpFitOptions) -> Result<GpCoefficientSurrogate> {
        GpCoefficientSurrogate::fit_all(&self.xi, &self.params, opts)
    }
}

/// Largest entry of a variance field.
pub fn max_variance(field: &Matrix) -> f64 {
    field.data().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Training loop bound to a parameter grid and a full-order model.
pub struct ActiveTrainer<'f> {
    pub config: TrainerConfig,
    pub grid: ParameterGrid,
    pub state: TrainingState,
    fom: &'f dyn FullOrderModel,
}

impl<'f> ActiveTrainer<'f> {
    /// Runs the full-order model at `initial_params` and builds the initial state.
    pub fn new(
        config: TrainerConfig,
        mut grid: ParameterGrid,
        fom: &'f dyn FullOrderModel,
        initial_params: &[ParameterVector],
    ) -> Result<Self> {
        config.validate()?;
        if initial_params.is_empty() {
            return Err(Error::Config("at least one initial parameter is required".into()));
        }
        let snapshots = initial_params
            .iter()
            .map(|p| fom.solve(p))
            .collect::<Result<Vec<_>>>()?;
        for p in initial_params {
            if let Some(i) = grid.index_of(p) {
                grid.mark_sampled(i);
            }
        }
        let state = TrainingState::new(&config, snapshots)?;
        Ok(ActiveTrainer { config, grid, state, fom })
    }

    /// Resumes from an existing state.
    pub fn from_state(config: TrainerConfig, grid: ParameterGrid, fom: &'f dyn FullOrderModel, state: TrainingState) -> Result<Self> {
        config.validate()?;
        Ok(ActiveTrainer { config, grid, state, fom })
    }

    fn gp_seed(&self) -> u64 {
        self.config.seed.wrapping_mul(0x9E37_79B9).wrapping_add(self.state.epoch as u64)
    }

    pub fn fit_surrogate(&self) -> Result<GpCoefficientSurrogate> {
        self.state.fit_surrogate(&self.config.gp_options(self.gp_seed()))
    }

    /// Max variance of the ROM ensemble at every unsampled grid point, in grid order.
    pub fn candidate_scores(&self, surrogate: &GpCoefficientSurrogate) -> Result<Vec<(usize, f64, f64)>> {
        let rom = RomPredictor::new(&self.state.ae, surrogate, self.state.library);
        let grid = *self.fom.grid();
        let base_seed = self.config.seed ^ ((self.state.epoch as u64) << 24);
        self.grid
            .unsampled_indices()
            .into_par_iter()
            .map(|idx| {
                let mu = self.grid.point(idx);
                let u0 = self.fom.initial_condition(&mu)?;
                match rom.predict(&mu, &u0, &grid, self.config.n_samples, base_seed.wrapping_add(idx as u64)) {
                    Ok(p) => Ok((idx, max_variance(&p.variance), p.max_std)),
                    Err(Error::Divergence { .. } | Error::Numeric(_)) => {
                        log::warn!("every ROM sample diverged at {mu}; treating it as maximally uncertain");
                        Ok((idx, f64::INFINITY, f64::INFINITY))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect()
    }

    /// Refits the coefficient GPs, picks the unsampled grid point with the
    /// largest ROM variance, runs the full-order model there and adds the result.
    ///
    /// Returns `None` when the budget is spent.
    pub fn greedy_acquire(&mut self) -> Result<Option<Acquisition>> {
        if self.state.acquisitions.len() >= self.config.fom_budget {
            log::info!("epoch {}: acquisition budget of {} exhausted", self.state.epoch, self.config.fom_budget);
            return Ok(None);
        }
        if self.grid.unsampled_indices().is_empty() {
            return Err(Error::Acquisition("every grid point has already been sampled".into()));
        }
        let surrogate = self.fit_surrogate()?;
        let scores = self.candidate_scores(&surrogate)?;
        let pick = argmax_first(&scores.iter().map(|s| s.1).collect::<Vec<_>>())
            .ok_or_else(|| Error::Acquisition("no candidate produced a variance".into()))?;
        let (grid_index, _, max_std) = scores[pick];
        let mu = self.grid.point(grid_index);
        let snap = self
            .fom
            .solve(&mu)
            .map_err(|e| Error::Acquisition(format!("full-order solve at {mu} failed: {e}")))?;
        self.state.add_snapshot(snap)?;
        self.grid.mark_sampled(grid_index);
        let acq = Acquisition { epoch: self.state.epoch, mu, grid_index, max_std };
        log::info!("epoch {}: acquired {} (max std {:.3e})", acq.epoch, acq.mu, acq.max_std);
        self.state.acquisitions.push(acq.clone());
        Ok(Some(acq))
    }

    /// Trains until `max_epochs`, acquiring every `greedy_interval` epochs while
    /// budget and candidates remain. On error the state holds the last good epoch.
    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| {})
    }

    /// Like [`run`](Self::run), calling `on_epoch` after every epoch.
    pub fn run_with(&mut self, mut on_epoch: impl FnMut(&TrainingState)) -> Result<()> {
        while self.state.epoch < self.config.max_epochs {
            self.state.train_epoch(&self.config)?;
            on_epoch(&self.state);
            let e = self.state.epoch;
            if e.is_multiple_of(self.config.greedy_interval)
                && e < self.config.max_epochs
                && self.state.acquisitions.len() < self.config.fom_budget
                && !self.grid.unsampled_indices().is_empty()
            {
                self.greedy_acquire()?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::BurgersFom;
    use crate::nn::MlpParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_fom() -> BurgersFom {
        BurgersFom::new(SpaceTimeGrid { n_u: 12, n_t: 20, x_min: -3.0, x_max: 3.0, t_max: 0.5 }, 0.05)
    }

    fn tiny_grid() -> ParameterGrid {
        ParameterGrid::uniform(vec!["a".into(), "w".into()], &[(0.7, 0.9, 3), (0.9, 1.1, 3)]).unwrap()
    }

    fn tiny_config() -> TrainerConfig {
        TrainerConfig {
            max_epochs: 50,
            greedy_interval: 10,
            learning_rate: 1e-3,
            n_samples: 5,
            fom_budget: 2,
            latent_dim: 2,
            hidden: vec![6],
            gp_restarts: 2,
            gp_iterations: 30,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn config_validation_names_fields() {
        let mut c = TrainerConfig { greedy_interval: 10, max_epochs: 5, ..TrainerConfig::default() };
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("greedy_interval"));
        c.max_epochs = 50;
        c.sindy_weight = -1.0;
        assert!(c.validate().unwrap_err().to_string().contains("sindy_weight"));
        assert!(TrainerConfig::default().validate().is_ok());
    }

    #[test]
    fn schedule_arithmetic() {
        let c = TrainerConfig { fom_budget: 2, greedy_interval: 100, max_epochs: 500, ..TrainerConfig::default() };
        assert_eq!(c.acquisition_epochs(), vec![100, 200]);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let a = Matrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 0.0]]).unwrap();
        let b = Matrix::zeros(2, 2);
        assert_eq!(argmax_first(&[max_variance(&a), max_variance(&b)]), Some(0));
        assert_eq!(argmax_first(&[max_variance(&b), max_variance(&a)]), Some(1));
        assert_eq!(argmax_first(&[2.0, 5.0, 5.0, 1.0]), Some(1));
        assert_eq!(argmax_first(&[]), None);
    }

    #[test]
    fn zero_weight_reduces_to_reconstruction_loss() {
        let fom = tiny_fom();
        let snaps = vec![fom.solve(&ParameterVector(vec![0.8, 1.0])).unwrap()];
        let state = TrainingState::new(&tiny_config(), snaps).unwrap();
        let l = state.joint_loss(0.0).unwrap();
        assert_eq!(l.total, l.l_ae);
        let recon = state.ae.decode(&state.ae.encode(&state.snapshots[0].u).unwrap()).unwrap();
        let mse = recon.sub(&state.snapshots[0].u).unwrap().data().iter().map(|v| v * v).sum::<f64>()
            / recon.data().len() as f64;
        assert!((mse - l.l_ae).abs() < 1e-15);
        // ξ receives no gradient without the regression term
        let n_ae = state.ae.num_params();
        assert!(l.grad[n_ae..].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn identity_autoencoder_on_linear_latent_data_sits_at_truncation_floor() {
        // field = (z0, z1, 0) with ż = A z
        let a = Matrix::from_rows(&[vec![-0.5, 1.0], vec![-1.0, -0.5]]).unwrap();
        let n_t = 100;
        let t_max = 1.0;
        let dt = t_max / n_t as f64;
        let u = Matrix::from_fn(n_t + 1, 3, |i, j| {
            let t = i as f64 * dt;
            let (s, c) = t.sin_cos();
            let r = (-0.5 * t).exp();
            match j {
                0 => r * c,
                1 => -r * s,
                _ => 0.0,
            }
        });
        let grid = SpaceTimeGrid { n_u: 3, n_t, x_min: 0.0, x_max: 1.0, t_max };
        let snap = SnapshotMatrix { u: u.clone(), mu: ParameterVector(vec![0.0, 1.0]), grid };
        let enc = MlpParams::from_parts(
            vec![Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap()],
            vec![vec![0.0; 2]],
        )
        .unwrap();
        let dec = MlpParams::from_parts(vec![enc.weights()[0].transpose()], vec![vec![0.0; 3]]).unwrap();
        let ae = Autoencoder::from_parts(enc, dec).unwrap();
        let config = TrainerConfig { latent_dim: 2, hidden: vec![], ..TrainerConfig::default() };
        let mut state = TrainingState::with_autoencoder(&config, vec![snap], ae).unwrap();
        state.xi = {
            let mut t = CoefficientTensor::new(&state.library);
            t.push(a.clone()).unwrap();
            t
        };
        let l = state.joint_loss(0.25).unwrap();
        assert_eq!(l.l_ae, 0.0);
        // floor: mean squared gap between the stencil and the analytic derivative
        let z = u.row_block(0, n_t + 1);
        let z2 = Matrix::from_fn(n_t + 1, 2, |i, j| z.get(i, j));
        let fd = crate::sindy::estimate_time_derivative(&z2, dt).unwrap();
        let exact = z2.matmul_transb(&a).unwrap();
        let floor = fd.sub(&exact).unwrap().data().iter().map(|v| v * v).sum::<f64>() / fd.data().len() as f64;
        assert!((l.l_sindy - floor).abs() <= 1e-15 + 1e-9 * floor);
        assert!(l.total < 1e-6);
    }

    #[test]
    fn joint_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = SpaceTimeGrid { n_u: 6, n_t: 10, x_min: 0.0, x_max: 1.0, t_max: 1.0 };
        let snaps: Vec<SnapshotMatrix> = (0..2)
            .map(|k| SnapshotMatrix {
                u: Matrix::from_fn(11, 6, |i, j| ((i as f64) * 0.1 + j as f64 * 0.7 + k as f64).sin() + rng.gen_range(-0.1..0.1)),
                mu: ParameterVector(vec![k as f64, 1.0]),
                grid,
            })
            .collect();
        let config = TrainerConfig { latent_dim: 2, hidden: vec![4], ..TrainerConfig::default() };
        let mut state = TrainingState::new(&config, snaps).unwrap();
        let base = state.flat_params();
        let g = state.joint_loss(0.25).unwrap().grad;
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            state.assign_flat(&p).unwrap();
            let up = state.joint_loss(0.25).unwrap().total;
            p[i] -= 2.0 * h;
            state.assign_flat(&p).unwrap();
            let down = state.joint_loss(0.25).unwrap().total;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / (g[i].abs() + 1e-4));
        }
        assert!(worst < 1e-5, "worst {worst:e}");
    }

    #[test]
    fn epoch_bookkeeping() {
        let fom = tiny_fom();
        let snaps = vec![fom.solve(&ParameterVector(vec![0.8, 1.0])).unwrap()];
        let mut config = tiny_config();
        let mut state = TrainingState::new(&config, snaps).unwrap();
        state.train_epoch(&config).unwrap();
        assert_eq!(state.loss_history.len(), 1);
        assert_eq!(state.epoch, 1);
        assert_eq!(state.adam.step_count(), 1);

        config.learning_rate = 0.0;
        let before = state.flat_params();
        state.train_epoch(&config).unwrap();
        assert_eq!(state.flat_params(), before);
        assert_eq!(state.loss_history.len(), 2);
    }

    #[test]
    fn budget_zero_never_acquires() {
        let fom = tiny_fom();
        let grid = tiny_grid();
        let corners = grid.corners();
        let config = TrainerConfig { fom_budget: 0, max_epochs: 20, ..tiny_config() };
        let mut t = ActiveTrainer::new(config, grid, &fom, &corners).unwrap();
        t.run().unwrap();
        assert!(t.state.acquisitions.is_empty());
        assert_eq!(t.state.dataset_len(), 4);
        assert_eq!(t.state.loss_history.len(), 20);
        assert_eq!(t.greedy_acquire().unwrap(), None);
    }

    #[test]
    fn acquisitions_follow_the_schedule() {
        let fom = tiny_fom();
        let grid = tiny_grid();
        let corners = grid.corners();
        let config = TrainerConfig { fom_budget: 2, greedy_interval: 10, max_epochs: 50, ..tiny_config() };
        let mut t = ActiveTrainer::new(config, grid, &fom, &corners).unwrap();
        t.run().unwrap();
        let epochs: Vec<usize> = t.state.acquisitions.iter().map(|a| a.epoch).collect();
        assert_eq!(epochs, vec![10, 20]);
        assert_eq!(t.state.dataset_len(), 6);
        assert_eq!(t.state.xi.len(), 6);
        assert_eq!(t.state.adam.len(), t.state.num_params());
        for a in &t.state.acquisitions {
            assert!(!corners.contains(&a.mu));
            assert!(t.grid.is_sampled(a.grid_index));
        }
        let distinct: std::collections::HashSet<usize> = t.state.acquisitions.iter().map(|a| a.grid_index).collect();
        assert_eq!(distinct.len(), 2);
    }

    struct FailingFom(BurgersFom, ParameterVector);

    impl FullOrderModel for FailingFom {
        fn grid(&self) -> &SpaceTimeGrid {
            &self.0.grid
        }
        fn solve(&self, mu: &ParameterVector) -> Result<SnapshotMatrix> {
            if mu == &self.1 {
                self.0.solve(mu)
            } else {
                Err(Error::Divergence { step: 1, context: "injected".into() })
            }
        }
        fn initial_condition(&self, mu: &ParameterVector) -> Result<Vec<f64>> {
            self.0.initial_condition(mu)
        }
    }

    #[test]
    fn failed_solve_leaves_state_unchanged() {
        let grid = tiny_grid();
        let start = grid.point(0);
        let other = grid.point(8);
        let fom = FailingFom(tiny_fom(), start.clone());
        let config = tiny_config();
        // initial runs go through the working parameter only
        let mut t = ActiveTrainer::new(config, grid, &fom, &[start]).unwrap();
        // second parameter needed for the GP; inject it directly
        let snap = tiny_fom().solve(&other).unwrap();
        t.state.add_snapshot(snap).unwrap();
        t.grid.mark_sampled(8);
        let before_len = t.state.dataset_len();
        let before_flags = t.grid.sampled_flags().to_vec();
        let err = t.greedy_acquire().unwrap_err();
        assert!(matches!(err, Error::Acquisition(_)));
        assert_eq!(t.state.dataset_len(), before_len);
        assert_eq!(t.grid.sampled_flags(), before_flags.as_slice());
        assert!(t.state.acquisitions.is_empty());
    }

    #[test]
    fn scaling_variances_keeps_the_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let fields: Vec<Matrix> = (0..6).map(|_| Matrix::from_fn(3, 4, |_, _| rng.gen_range(0.0..1.0))).collect();
            let c = rng.gen_range(1e-3..1e3);
            let s: Vec<f64> = fields.iter().map(max_variance).collect();
            let scaled: Vec<f64> = fields.iter().map(|f| max_variance(&f.scale(c))).collect();
            assert_eq!(argmax_first(&s), argmax_first(&scaled));
        }
    }
}
