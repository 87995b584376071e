//! Full-order model: 1D viscous Burgers on a periodic domain.
//!
//! `u_t + (u²/2)_x = ν u_xx` with a Gaussian pulse `a·exp(−x²/(2w²))` as
//! initial condition, so the parameter vector is `μ = (a, w)`. Advection uses
//! the Godunov flux for the convex flux `u²/2`, diffusion the central second
//! difference, and time marching is explicit Euler.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Safety factor applied to both the advective and the diffusive time-step limits.
pub const CFL_SAFETY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        ParameterVector(v)
    }
}

impl std::fmt::Display for ParameterVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| format!("{v}")).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// Tensor-product grid over the parameter space, with a sampled flag per point.
///
/// Points are enumerated with the first dimension varying slowest, so for a
/// 2D grid the linear index is `i0 * n1 + i1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterGrid {
    names: Vec<String>,
    breakpoints: Vec<Vec<f64>>,
    sampled: Vec<bool>,
}

impl ParameterGrid {
    pub fn new(names: Vec<String>, breakpoints: Vec<Vec<f64>>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.iter().any(Vec::is_empty) {
            return Err(Error::Config("parameter grid needs at least one breakpoint per dimension".into()));
        }
        if names.len() != breakpoints.len() {
            return Err(Error::Config(format!(
                "{} parameter names for {} dimensions",
                names.len(),
                breakpoints.len()
            )));
        }
        let mut breakpoints = breakpoints;
        for (d, b) in breakpoints.iter_mut().enumerate() {
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("non-finite breakpoint in dimension {d}")));
            }
            b.sort_by(f64::total_cmp);
            if b.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config(format!("duplicate breakpoint in dimension {d}")));
            }
        }
        let count = breakpoints.iter().map(Vec::len).product();
        Ok(ParameterGrid { names, breakpoints, sampled: vec![false; count] })
    }

    /// `count` evenly spaced breakpoints from `lo` to `hi` in each dimension.
    pub fn uniform(names: Vec<String>, ranges: &[(f64, f64, usize)]) -> Result<Self> {
        let breakpoints = ranges
            .iter()
            .map(|&(lo, hi, n)| match n {
                0 => Vec::new(),
                1 => vec![lo],
                _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
            })
            .collect();
        Self::new(names, breakpoints)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn breakpoints(&self) -> &[Vec<f64>] {
        &self.breakpoints
    }

    pub fn dim(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn len(&self) -> usize {
        self.sampled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sampled.is_empty()
    }

    pub fn point(&self, index: usize) -> ParameterVector {
        let mut rem = index;
        let mut values = vec![0.0; self.dim()];
        for d in (0..self.dim()).rev() {
            let n = self.breakpoints[d].len();
            values[d] = self.breakpoints[d][rem % n];
            rem /= n;
        }
        ParameterVector(values)
    }

    pub fn points(&self) -> Vec<ParameterVector> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Linear index of a point that lies exactly on the grid.
    pub fn index_of(&self, mu: &ParameterVector) -> Option<usize> {
        if mu.dim() != self.dim() {
            return None;
        }
        let mut index = 0;
        for (d, &v) in mu.values().iter().enumerate() {
            let pos = self.breakpoints[d].iter().position(|&b| (b - v).abs() <= 1e-12 * (1.0 + b.abs()))?;
            index = index * self.breakpoints[d].len() + pos;
        }
        Some(index)
    }

    pub fn corners(&self) -> Vec<ParameterVector> {
        let d = self.dim();
        let mut out: Vec<ParameterVector> = Vec::new();
        for mask in 0..(1usize << d) {
            let values: Vec<f64> = (0..d)
                .map(|k| {
                    let b = &self.breakpoints[k];
                    if mask >> (d - 1 - k) & 1 == 0 { b[0] } else { b[b.len() - 1] }
                })
                .collect();
            let p = ParameterVector(values);
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.breakpoints.iter().map(|b| (b[0], b[b.len() - 1])).collect()
    }

    pub fn contains(&self, mu: &ParameterVector) -> bool {
        mu.dim() == self.dim() && self.bounds().iter().zip(mu.values()).all(|(&(lo, hi), &v)| v >= lo && v <= hi)
    }

    pub fn is_sampled(&self, index: usize) -> bool {
        self.sampled[index]
    }

    pub fn mark_sampled(&mut self, index: usize) {
        self.sampled[index] = true;
    }

    pub fn sampled_flags(&self) -> &[bool] {
        &self.sampled
    }

    pub fn unsampled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.sampled[i]).collect()
    }
}

/// Uniform periodic space grid on `[x_min, x_max)` and uniform time grid on `[0, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub n_u: usize,
    pub n_t: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub t_max: f64,
}

impl Default for SpaceTimeGrid {
    fn default() -> Self {
        SpaceTimeGrid { n_u: 128, n_t: 200, x_min: -3.0, x_max: 3.0, t_max: 1.0 }
    }
}

impl SpaceTimeGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_u < 3 || self.n_t < 2 {
            return Err(Error::Config(format!("grid too small: n_u={}, n_t={}", self.n_u, self.n_t)));
        }
        if !(self.x_max > self.x_min) || !(self.t_max > 0.0) {
            return Err(Error::Config("grid extents must be positive".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_u as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.n_t as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    /// Largest stable step for a field bounded by `max_speed` under viscosity `nu`.
    pub fn max_stable_dt(&self, max_speed: f64, nu: f64) -> f64 {
        let dx = self.dx();
        let adv = if max_speed > 0.0 { CFL_SAFETY * dx / max_speed } else { f64::INFINITY };
        let diff = if nu > 0.0 { CFL_SAFETY * dx * dx / (2.0 * nu) } else { f64::INFINITY };
        adv.min(diff)
    }
}

/// One full-order solution: `(n_t + 1) × n_u` field history.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub u: Matrix,
    pub mu: ParameterVector,
    pub grid: SpaceTimeGrid,
}

/// Anything that can produce snapshots for a parameter vector.
pub trait FullOrderModel: Sync {
    fn grid(&self) -> &SpaceTimeGrid;
    fn solve(&self, mu: &ParameterVector) -> Result<SnapshotMatrix>;
    fn initial_condition(&self, mu: &ParameterVector) -> Result<Vec<f64>>;
}

pub fn initial_condition(mu: &ParameterVector, grid: &SpaceTimeGrid) -> Result<Vec<f64>> {
    let [a, w] = mu.values() else {
        return Err(Error::Parameter(format!("expected (amplitude, width), got {mu}")));
    };
    if !(*w > 0.0) || !a.is_finite() || !w.is_finite() {
        return Err(Error::Parameter(format!("width must be positive and finite, got {mu}")));
    }
    let two_w2 = 2.0 * w * w;
    Ok((0..grid.n_u)
        .map(|j| {
            let x = grid.x(j);
            a * (-x * x / two_w2).exp()
        })
        .collect())
}

#[inline]
fn godunov_flux(ul: f64, ur: f64) -> f64 {
    if ul <= ur {
        if ul > 0.0 {
            0.5 * ul * ul
        } else if ur < 0.0 {
            0.5 * ur * ur
        } else {
            0.0
        }
    } else {
        // shock: upwind side is picked by the sign of (ul + ur) / 2
        0.5 * (ul * ul).max(ur * ur)
    }
}

pub fn solve(mu: &ParameterVector, grid: &SpaceTimeGrid, viscosity: f64) -> Result<SnapshotMatrix> {
    grid.validate()?;
    if !(viscosity >= 0.0) {
        return Err(Error::Config(format!("viscosity must be non-negative, got {viscosity}")));
    }
    let u0 = initial_condition(mu, grid)?;
    let max_speed = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dt = grid.dt();
    let limit = grid.max_stable_dt(max_speed, viscosity);
    if dt > limit {
        return Err(Error::Config(format!(
            "time step {dt:e} exceeds the stability limit {limit:e} for {mu}"
        )));
    }
    let n = grid.n_u;
    let dx = grid.dx();
    let adv = dt / dx;
    let diff = viscosity * dt / (dx * dx);

    let mut u = Matrix::zeros(grid.n_t + 1, n);
    u.row_mut(0).copy_from_slice(&u0);
    let mut cur = u0;
    let mut next = vec![0.0; n];
    let mut flux = vec![0.0; n];
    for step in 1..=grid.n_t {
        // flux[j] sits on the face between cells j and j+1
        for j in 0..n {
            flux[j] = godunov_flux(cur[j], cur[(j + 1) % n]);
        }
        for j in 0..n {
            let left = (j + n - 1) % n;
            let right = (j + 1) % n;
            next[j] = cur[j] - adv * (flux[j] - flux[left]) + diff * (cur[right] - 2.0 * cur[j] + cur[left]);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step, context: format!("Burgers solve for {mu}") });
        }
        u.row_mut(step).copy_from_slice(&next);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(SnapshotMatrix { u, mu: mu.clone(), grid: *grid })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurgersFom {
    pub grid: SpaceTimeGrid,
    pub viscosity: f64,
}

impl Default for BurgersFom {
    fn default() -> Self {
        BurgersFom { grid: SpaceTimeGrid::default(), viscosity: 0.02 }
    }
}

impl BurgersFom {
    pub fn new(grid: SpaceTimeGrid, viscosity: f64) -> Self {
        BurgersFom { grid, viscosity }
    }

    /// Wall-clock seconds for one solve.
    pub fn runtime_probe(&self, mu: &ParameterVector) -> Result<f64> {
        let start = Instant::now();
        let snap = solve(mu, &self.grid, self.viscosity)?;
        let elapsed = start.elapsed().as_secs_f64();
        std::hint::black_box(snap);
        Ok(elapsed)
    }

    /// Checks the stability bound without running the solver.
    pub fn check_stability(&self, mu: &ParameterVector) -> Result<()> {
        let u0 = initial_condition(mu, &self.grid)?;
        let max_speed = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let limit = self.grid.max_stable_dt(max_speed, self.viscosity);
        if self.grid.dt() > limit {
            return Err(Error::Config(format!(
                "fom.n_t: time step {:e} exceeds the stability limit {limit:e} at {mu}",
                self.grid.dt()
            )));
        }
        Ok(())
    }
}

impl FullOrderModel for BurgersFom {
    fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    fn solve(&self, mu: &ParameterVector) -> Result<SnapshotMatrix> {
        solve(mu, &self.grid, self.viscosity)
    }

    fn initial_condition(&self, mu: &ParameterVector) -> Result<Vec<f64>> {
        initial_condition(mu, &self.grid)
    }
}
