//! Run configuration, file formats and the command implementations behind the CLI.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::{BurgersFom, FullOrderModel, ParameterGrid, ParameterVector, SnapshotMatrix, SpaceTimeGrid};
use crate::gp::{GpCoefficientSurrogate, RbfKernelParams};
use crate::linalg::Matrix;
use crate::nn::Autoencoder;
use crate::rom::{max_relative_error, RomPrediction, RomPredictor};
use crate::sindy::{CoefficientTensor, SindyLibrary};
use crate::trainer::{Acquisition, ActiveTrainer, LossRecord, TrainerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FomConfig {
    pub n_u: usize,
    pub n_t: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub t_max: f64,
    pub viscosity: f64,
}

impl Default for FomConfig {
    fn default() -> Self {
        let g = SpaceTimeGrid::default();
        FomConfig { n_u: g.n_u, n_t: g.n_t, x_min: g.x_min, x_max: g.x_max, t_max: g.t_max, viscosity: 0.02 }
    }
}

impl FomConfig {
    pub fn space_time(&self) -> SpaceTimeGrid {
        SpaceTimeGrid { n_u: self.n_u, n_t: self.n_t, x_min: self.x_min, x_max: self.x_max, t_max: self.t_max }
    }

    pub fn model(&self) -> BurgersFom {
        BurgersFom::new(self.space_time(), self.viscosity)
    }
}

/// One parameter axis: `points` evenly spaced values on `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

fn default_axes() -> Vec<AxisConfig> {
    vec![
        AxisConfig { name: "a".into(), min: 0.7, max: 0.9, points: 11 },
        AxisConfig { name: "w".into(), min: 0.9, max: 1.1, points: 11 },
    ]
}

/// Everything one run needs, read from a single JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fom: FomConfig,
    pub parameters: Vec<AxisConfig>,
    /// Starting parameters; the grid corners when absent.
    pub initial: Option<Vec<Vec<f64>>>,
    /// `generate` solves every grid point instead of only the starting parameters.
    pub generate_all: bool,
    pub trainer: TrainerConfig,
    pub output_dir: PathBuf,
    /// Overrides `trainer.seed`.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fom: FomConfig::default(),
            parameters: default_axes(),
            initial: None,
            generate_all: false,
            trainer: TrainerConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn parameter_grid(&self) -> Result<ParameterGrid> {
        let names = self.parameters.iter().map(|a| a.name.clone()).collect();
        let ranges: Vec<(f64, f64, usize)> = self.parameters.iter().map(|a| (a.min, a.max, a.points)).collect();
        ParameterGrid::uniform(names, &ranges).map_err(|e| Error::Config(format!("parameters: {e}")))
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig { seed: self.seed, ..self.trainer.clone() }
    }

    pub fn initial_params(&self) -> Result<Vec<ParameterVector>> {
        let grid = self.parameter_grid()?;
        match &self.initial {
            None => Ok(grid.corners()),
            Some(list) => Ok(list.iter().cloned().map(ParameterVector).collect()),
        }
    }

    /// Checks every field and cross-field constraint; the message names the field.
    pub fn validate(&self) -> Result<()> {
        let space_time = self.fom.space_time();
        space_time.validate().map_err(|e| Error::Config(format!("fom: {e}")))?;
        if !(self.fom.viscosity > 0.0) {
            return Err(Error::Config(format!("fom.viscosity: must be positive, got {}", self.fom.viscosity)));
        }
        if self.parameters.len() != 2 {
            return Err(Error::Config(format!(
                "parameters: the Burgers model takes 2 parameters (amplitude, width), got {}",
                self.parameters.len()
            )));
        }
        for (i, a) in self.parameters.iter().enumerate() {
            if a.points == 0 || !(a.min <= a.max) || (a.points > 1 && a.min == a.max) {
                return Err(Error::Config(format!("parameters[{i}] ({}): need min < max and points ≥ 1", a.name)));
            }
        }
        let grid = self.parameter_grid()?;
        if let Some(list) = &self.initial {
            if list.is_empty() {
                return Err(Error::Config("initial: must not be empty".into()));
            }
            for (i, p) in list.iter().enumerate() {
                if p.len() != grid.dim() || !grid.contains(&ParameterVector(p.clone())) {
                    return Err(Error::Config(format!("initial[{i}]: {p:?} is not inside the parameter grid")));
                }
            }
        }
        let fom = self.fom.model();
        for mu in grid.points() {
            if let Err(e) = fom.check_stability(&mu) {
                return Err(Error::Config(format!("fom.n_t: time step violates the stability bound at {mu}: {e}")));
            }
        }
        self.trainer.validate()?;
        if self.trainer.latent_dim >= self.fom.n_u {
            return Err(Error::Config(format!(
                "trainer.latent_dim: {} must be smaller than fom.n_u {}",
                self.trainer.latent_dim, self.fom.n_u
            )));
        }
        Ok(())
    }
}

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

const SNAP_MAGIC: &[u8; 8] = b"LROMSNAP";
const SNAP_VERSION: u32 = 1;

/// Binary field history: header, parameter vector, then `(n_t+1)·n_u` little-endian f64.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFile {
    pub n_t: usize,
    pub n_u: usize,
    pub dt: f64,
    pub dx: f64,
    pub mu: ParameterVector,
    pub data: Matrix,
}

impl SnapshotFile {
    pub fn new(data: Matrix, mu: ParameterVector, grid: &SpaceTimeGrid) -> Result<Self> {
        if data.shape() != (grid.n_t + 1, grid.n_u) {
            return Err(Error::shape(format!(
                "field {:?} does not match grid ({}, {})",
                data.shape(),
                grid.n_t + 1,
                grid.n_u
            )));
        }
        Ok(SnapshotFile { n_t: grid.n_t, n_u: grid.n_u, dt: grid.dt(), dx: grid.dx(), mu, data })
    }

    pub fn from_snapshot(s: &SnapshotMatrix) -> Result<Self> {
        Self::new(s.u.clone(), s.mu.clone(), &s.grid)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * (self.mu.dim() + self.data.data().len()));
        out.extend_from_slice(SNAP_MAGIC);
        out.extend_from_slice(&SNAP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_t as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_u as u64).to_le_bytes());
        out.extend_from_slice(&self.dt.to_le_bytes());
        out.extend_from_slice(&self.dx.to_le_bytes());
        out.extend_from_slice(&(self.mu.dim() as u32).to_le_bytes());
        for v in self.mu.values().iter().chain(self.data.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != SNAP_MAGIC {
            return Err(Error::Format("not a snapshot file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != SNAP_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let n_t = r.u64()? as usize;
        let n_u = r.u64()? as usize;
        let dt = r.f64()?;
        let dx = r.f64()?;
        let n_mu = r.u32()? as usize;
        let mu = (0..n_mu).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let count = n_t
            .checked_add(1)
            .and_then(|r| r.checked_mul(n_u))
            .ok_or_else(|| Error::Format("snapshot dimensions overflow".into()))?;
        if r.remaining() != count * 8 {
            return Err(Error::Format(format!(
                "payload is {} bytes, expected {} for {}×{}",
                r.remaining(),
                count * 8,
                n_t + 1,
                n_u
            )));
        }
        let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        Ok(SnapshotFile { n_t, n_u, dt, dx, mu: ParameterVector(mu), data: Matrix::from_vec(n_t + 1, n_u, data)? })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated snapshot header".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Standardization constants of one coefficient GP, stored for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpNormalization {
    pub target_mean: f64,
    pub target_std: f64,
    pub input_lo: Vec<f64>,
    pub input_hi: Vec<f64>,
}

/// Everything needed to predict without retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub ae: Autoencoder,
    pub xi: CoefficientTensor,
    pub library: SindyLibrary,
    pub params: Vec<ParameterVector>,
    /// Empty when the GPs could not be fit.
    pub kernels: Vec<RbfKernelParams>,
    pub normalization: Vec<GpNormalization>,
    pub fom: FomConfig,
    pub grid: ParameterGrid,
    pub trainer: TrainerConfig,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_parts(
        trainer: &ActiveTrainer<'_>,
        fom: &FomConfig,
        surrogate: Option<&GpCoefficientSurrogate>,
    ) -> Self {
        let s = &trainer.state;
        let (kernels, normalization) = match surrogate {
            Some(sur) => (
                sur.models().iter().map(|m| m.kernel().clone()).collect(),
                sur.models()
                    .iter()
                    .map(|m| GpNormalization {
                        target_mean: m.target_mean(),
                        target_std: m.target_std(),
                        input_lo: m.scaling().lo.clone(),
                        input_hi: m.scaling().hi.clone(),
                    })
                    .collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        Checkpoint {
            epoch: s.epoch,
            ae: s.ae.clone(),
            xi: s.xi.clone(),
            library: s.library,
            params: s.params.clone(),
            kernels,
            normalization,
            fom: fom.clone(),
            grid: trainer.grid.clone(),
            trainer: trainer.config.clone(),
            seed: trainer.config.seed,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        ck.trainer.seed = ck.seed;
        Ok(ck)
    }

    /// Rebuilds the coefficient GPs from the stored kernels and training data.
    pub fn surrogate(&self) -> Result<GpCoefficientSurrogate> {
        if self.kernels.is_empty() {
            return Err(Error::State("checkpoint holds no fitted GPs".into()));
        }
        GpCoefficientSurrogate::from_kernels(&self.xi, &self.params, &self.kernels)
    }

    pub fn predict(
        &self,
        surrogate: &GpCoefficientSurrogate,
        mu: &ParameterVector,
        n_s: usize,
        seed: u64,
    ) -> Result<RomPrediction> {
        let grid = self.fom.space_time();
        let u0 = crate::fom::initial_condition(mu, &grid)?;
        RomPredictor::new(&self.ae, surrogate, self.library).predict(mu, &u0, &grid, n_s, seed)
    }
}

pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("epoch,l_ae,l_sindy,total\n");
    for (i, r) in history.iter().enumerate() {
        s.push_str(&format!("{},{},{},{}\n", i + 1, r.l_ae, r.l_sindy, r.total));
    }
    s
}

pub fn acquisitions_csv(log: &[Acquisition], grid: &ParameterGrid) -> String {
    let mut s = String::from("epoch,grid_index");
    for n in grid.names() {
        s.push(',');
        s.push_str(n);
    }
    s.push_str(",max_std\n");
    for a in log {
        s.push_str(&format!("{},{}", a.epoch, a.grid_index));
        for v in a.mu.values() {
            s.push_str(&format!(",{v}"));
        }
        s.push_str(&format!(",{}\n", a.max_std));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapRow {
    pub p1: f64,
    pub p2: f64,
    pub max_rel_error: f64,
    pub max_std: f64,
    pub sampled: bool,
}

pub const HEATMAP_HEADER: &str = "p1,p2,max_rel_error,max_std,sampled";

pub fn heatmap_csv(rows: &[HeatmapRow]) -> String {
    let mut s = format!("{HEATMAP_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.p1, r.p2, r.max_rel_error, r.max_std, u8::from(r.sampled)));
    }
    s
}

/// Parses `"0.8,1.0"` into a parameter vector.
pub fn parse_mu(text: &str) -> Result<ParameterVector> {
    let values = text
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("--mu: cannot read {t:?} as a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParameterVector(values))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub mu: Vec<f64>,
    pub grid_index: Option<usize>,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_t: usize,
    pub n_u: usize,
    pub viscosity: f64,
    pub entries: Vec<ManifestEntry>,
    pub total_secs: f64,
}

impl Manifest {
    pub fn mean_runtime(&self) -> f64 {
        self.entries.iter().map(|e| e.runtime_secs).sum::<f64>() / self.entries.len().max(1) as f64
    }
}

/// Solves the full-order model for the starting parameters (or the whole grid)
/// and writes one `.snap` per solve plus `manifest.json`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Manifest> {
    ensure_dir(&cfg.output_dir)?;
    let fom = cfg.fom.model();
    let grid = cfg.parameter_grid()?;
    let params = if cfg.generate_all { grid.points() } else { cfg.initial_params()? };
    let start = Instant::now();
    let mut entries = Vec::with_capacity(params.len());
    for (i, mu) in params.iter().enumerate() {
        let t0 = Instant::now();
        let snap = fom.solve(mu)?;
        let runtime_secs = t0.elapsed().as_secs_f64();
        let file = format!("snapshot_{i:04}.snap");
        SnapshotFile::from_snapshot(&snap)?.write(&cfg.output_dir.join(&file))?;
        entries.push(ManifestEntry { file, mu: mu.values().to_vec(), grid_index: grid.index_of(mu), runtime_secs });
    }
    let manifest = Manifest {
        n_t: cfg.fom.n_t,
        n_u: cfg.fom.n_u,
        viscosity: cfg.fom.viscosity,
        entries,
        total_secs: start.elapsed().as_secs_f64(),
    };
    write_atomic(&cfg.output_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub epochs: usize,
    pub dataset_len: usize,
    pub final_loss: Option<LossRecord>,
    pub acquisitions: Vec<Acquisition>,
}

/// Trains and writes `checkpoint.json`, `loss.csv` and `acquisitions.csv`.
///
/// If training fails the outputs are still written from the last good epoch
/// before the error is returned.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    ensure_dir(&cfg.output_dir)?;
    let fom = cfg.fom.model();
    let mut trainer = ActiveTrainer::new(cfg.trainer_config(), cfg.parameter_grid()?, &fom, &cfg.initial_params()?)?;
    let outcome = trainer.run();
    let surrogate = match trainer.fit_surrogate() {
        Ok(s) if s.models().iter().all(|m| m.target_std().is_finite() && m.target_mean().is_finite()) => Some(s),
        Ok(_) => {
            log::warn!("coefficient GPs are not finite; the checkpoint holds none");
            None
        }
        Err(e) => {
            log::warn!("could not fit the coefficient GPs for the checkpoint: {e}");
            None
        }
    };
    let checkpoint = cfg.output_dir.join("checkpoint.json");
    Checkpoint::from_parts(&trainer, &cfg.fom, surrogate.as_ref()).save(&checkpoint)?;
    write_atomic(&cfg.output_dir.join("loss.csv"), loss_csv(&trainer.state.loss_history).as_bytes())?;
    write_atomic(
        &cfg.output_dir.join("acquisitions.csv"),
        acquisitions_csv(&trainer.state.acquisitions, &trainer.grid).as_bytes(),
    )?;
    outcome?;
    Ok(TrainReport {
        checkpoint,
        epochs: trainer.state.epoch,
        dataset_len: trainer.state.dataset_len(),
        final_loss: trainer.state.loss_history.last().copied(),
        acquisitions: trainer.state.acquisitions.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub worst_error: f64,
    pub worst_mu: Vec<f64>,
    pub mean_error: f64,
    pub mean_fom_secs: f64,
    pub mean_rom_secs: f64,
    pub speedup: f64,
    pub n_samples: usize,
}

/// Compares ROM predictions against fresh full-order solves on every grid
/// point; writes `heatmap.csv` and `evaluation.json`.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, n_s: usize, seed: u64) -> Result<(EvaluationSummary, Vec<HeatmapRow>)> {
    let ck = Checkpoint::load(checkpoint)?;
    ensure_dir(&cfg.output_dir)?;
    let surrogate = ck.surrogate()?;
    let fom = ck.fom.model();
    let grid = &ck.grid;
    let rom = RomPredictor::new(&ck.ae, &surrogate, ck.library);
    let space_time = fom.grid();
    let mut rows = Vec::with_capacity(grid.len());
    let (mut fom_secs, mut rom_secs) = (0.0, 0.0);
    let (mut worst, mut worst_mu, mut sum) = (f64::NEG_INFINITY, Vec::new(), 0.0);
    for (idx, mu) in grid.points().into_iter().enumerate() {
        let t0 = Instant::now();
        let truth = fom.solve(&mu)?;
        fom_secs += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let u0 = fom.initial_condition(&mu)?;
        let pred = rom.predict(&mu, &u0, space_time, n_s, seed.wrapping_add(idx as u64))?;
        rom_secs += t0.elapsed().as_secs_f64();
        let err = max_relative_error(&truth.u, &pred.mean)?;
        sum += err;
        if err > worst {
            worst = err;
            worst_mu = mu.values().to_vec();
        }
        rows.push(HeatmapRow {
            p1: mu.values()[0],
            p2: mu.values()[1],
            max_rel_error: err,
            max_std: pred.max_std,
            sampled: grid.is_sampled(idx),
        });
    }
    let n = grid.len() as f64;
    let summary = EvaluationSummary {
        worst_error: worst,
        worst_mu,
        mean_error: sum / n,
        mean_fom_secs: fom_secs / n,
        mean_rom_secs: rom_secs / n,
        speedup: fom_secs / rom_secs,
        n_samples: n_s,
    };
    write_atomic(&cfg.output_dir.join("heatmap.csv"), heatmap_csv(&rows).as_bytes())?;
    write_atomic(&cfg.output_dir.join("evaluation.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok((summary, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub mu: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub max_std: f64,
    pub runtime_secs: f64,
    pub diverged_samples: Vec<usize>,
}

/// Writes `mean.snap`, `variance.snap` and `prediction.json` into `out`.
pub fn cmd_predict(checkpoint: &Path, mu: &ParameterVector, n_s: usize, seed: u64, out: &Path) -> Result<PredictionSummary> {
    let ck = Checkpoint::load(checkpoint)?;
    if mu.dim() != ck.grid.dim() {
        return Err(Error::Config(format!("--mu: expected {} values, got {}", ck.grid.dim(), mu.dim())));
    }
    if n_s == 0 {
        return Err(Error::Config("--samples: must be at least 1".into()));
    }
    if !ck.grid.contains(mu) {
        log::warn!("{mu} lies outside the training grid; the prediction extrapolates");
    }
    ensure_dir(out)?;
    let surrogate = ck.surrogate()?;
    let t0 = Instant::now();
    let pred = ck.predict(&surrogate, mu, n_s, seed)?;
    let runtime_secs = t0.elapsed().as_secs_f64();
    let grid = ck.fom.space_time();
    SnapshotFile::new(pred.mean.clone(), mu.clone(), &grid)?.write(&out.join("mean.snap"))?;
    SnapshotFile::new(pred.variance.clone(), mu.clone(), &grid)?.write(&out.join("variance.snap"))?;
    let summary = PredictionSummary {
        mu: mu.values().to_vec(),
        n_samples: n_s,
        seed,
        max_std: pred.max_std,
        runtime_secs,
        diverged_samples: pred.diverged,
    };
    write_atomic(&out.join("prediction.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}
