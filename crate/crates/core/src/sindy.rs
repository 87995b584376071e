//! Latent dynamics identification: candidate library, finite-difference time
//! derivatives, the regression residual and its gradients, and a direct
//! least-squares fit of the coefficient matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_posdef, Matrix};

/// Candidate terms `Θ(z)`: the latent coordinates, optionally preceded by a constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SindyLibrary {
    pub latent_dim: usize,
    pub include_constant: bool,
}

impl SindyLibrary {
    pub fn linear(latent_dim: usize) -> Self {
        SindyLibrary { latent_dim, include_constant: false }
    }

    pub fn with_constant(latent_dim: usize) -> Self {
        SindyLibrary { latent_dim, include_constant: true }
    }

    pub fn num_terms(&self) -> usize {
        self.latent_dim + usize::from(self.include_constant)
    }

    fn offset(&self) -> usize {
        usize::from(self.include_constant)
    }

    pub fn term_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.num_terms());
        if self.include_constant {
            names.push("1".to_string());
        }
        names.extend((0..self.latent_dim).map(|j| format!("z{j}")));
        names
    }

    pub fn build(&self, z_row: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_terms());
        if self.include_constant {
            out.push(1.0);
        }
        out.extend_from_slice(z_row);
        out
    }

    /// Writes `Θ(z)·ξᵀ` for one latent state into `out`.
    pub fn apply(&self, xi: &Matrix, z_row: &[f64], out: &mut [f64]) {
        let off = self.offset();
        for (j, o) in out.iter_mut().enumerate() {
            let coeffs = xi.row(j);
            let mut s = if self.include_constant { coeffs[0] } else { 0.0 };
            for (c, z) in coeffs[off..].iter().zip(z_row) {
                s += c * z;
            }
            *o = s;
        }
    }

    /// Library matrix with one row per latent state.
    pub fn theta(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.latent_dim {
            return Err(Error::shape(format!(
                "library over {} latent variables applied to {} columns",
                self.latent_dim,
                z.cols()
            )));
        }
        if !self.include_constant {
            return Ok(z.clone());
        }
        let n_l = self.num_terms();
        Ok(Matrix::from_fn(z.rows(), n_l, |i, k| if k == 0 { 1.0 } else { z.get(i, k - 1) }))
    }

    fn check_coefficients(&self, xi: &Matrix) -> Result<()> {
        if xi.shape() != (self.latent_dim, self.num_terms()) {
            return Err(Error::shape(format!(
                "coefficient matrix {:?}, expected {:?}",
                xi.shape(),
                (self.latent_dim, self.num_terms())
            )));
        }
        Ok(())
    }
}

/// Second-order finite differences along rows: central inside, one-sided at
/// both ends.
pub fn estimate_time_derivative(z: &Matrix, dt: f64) -> Result<Matrix> {
    let n = z.rows();
    if n < 3 {
        return Err(Error::shape(format!("time derivative needs at least 3 rows, got {n}")));
    }
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    let c = 0.5 / dt;
    let mut d = Matrix::zeros(n, z.cols());
    for j in 0..z.cols() {
        d.set(0, j, c * (-3.0 * z.get(0, j) + 4.0 * z.get(1, j) - z.get(2, j)));
        for i in 1..n - 1 {
            d.set(i, j, c * (z.get(i + 1, j) - z.get(i - 1, j)));
        }
        d.set(
            n - 1,
            j,
            c * (3.0 * z.get(n - 1, j) - 4.0 * z.get(n - 2, j) + z.get(n - 3, j)),
        );
    }
    Ok(d)
}

/// Applies the transpose of the stencil in [`estimate_time_derivative`].
pub fn derivative_adjoint(g: &Matrix, dt: f64) -> Matrix {
    let n = g.rows();
    let c = 0.5 / dt;
    let mut out = Matrix::zeros(n, g.cols());
    for j in 0..g.cols() {
        let mut add = |i: usize, v: f64| out.set(i, j, out.get(i, j) + v);
        let g0 = g.get(0, j);
        add(0, -3.0 * c * g0);
        add(1, 4.0 * c * g0);
        add(2, -c * g0);
        for i in 1..n - 1 {
            let gi = g.get(i, j);
            add(i + 1, c * gi);
            add(i - 1, -c * gi);
        }
        let gl = g.get(n - 1, j);
        add(n - 1, 3.0 * c * gl);
        add(n - 2, -4.0 * c * gl);
        add(n - 3, c * gl);
    }
    out
}

/// One latent trajectory and its estimated time derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    z: Matrix,
    z_dot: Matrix,
    dt: f64,
}

impl LatentTrajectory {
    pub fn new(z: Matrix, dt: f64) -> Result<Self> {
        let z_dot = estimate_time_derivative(&z, dt)?;
        Ok(LatentTrajectory { z, z_dot, dt })
    }

    /// Uses a caller-supplied derivative instead of the finite-difference estimate.
    pub fn with_derivative(z: Matrix, z_dot: Matrix, dt: f64) -> Result<Self> {
        if z.shape() != z_dot.shape() {
            return Err(Error::shape(format!("z {:?} vs z_dot {:?}", z.shape(), z_dot.shape())));
        }
        Ok(LatentTrajectory { z, z_dot, dt })
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn z_dot(&self) -> &Matrix {
        &self.z_dot
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn set_z(&mut self, z: Matrix) -> Result<()> {
        self.z_dot = estimate_time_derivative(&z, self.dt)?;
        self.z = z;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SindyResidual {
    /// Mean squared entry of `ż − Θ(z)·ξᵀ`.
    pub loss: f64,
    /// Gradient with respect to the latent trajectory, through both the
    /// finite-difference stencil and the library.
    pub grad_z: Matrix,
    pub grad_xi: Matrix,
}

/// Regression residual of one trajectory with exact gradients.
///
/// The gradient with respect to `z` assumes `ż` is the finite-difference
/// estimate of `z`; for trajectories built with
/// [`LatentTrajectory::with_derivative`] only the library path contributes.
pub fn sindy_residual(traj: &LatentTrajectory, xi: &Matrix, library: &SindyLibrary) -> Result<SindyResidual> {
    library.check_coefficients(xi)?;
    let theta = library.theta(&traj.z)?;
    let pred = theta.matmul_transb(xi)?;
    let r = traj.z_dot.sub(&pred)?;
    let m = r.data().len() as f64;
    let loss = r.data().iter().map(|v| v * v).sum::<f64>() / m;
    if !loss.is_finite() {
        return Err(Error::Numeric("latent regression residual".into()));
    }
    let g = r.scale(2.0 / m);
    let grad_xi = g.matmul_transa(&theta)?.scale(-1.0);
    let grad_theta = g.matmul(xi)?;
    let mut grad_z = derivative_adjoint(&g, traj.dt);
    let off = library.offset();
    for i in 0..grad_z.rows() {
        let gt = &grad_theta.row(i)[off..];
        for (gz, v) in grad_z.row_mut(i).iter_mut().zip(gt) {
            *gz -= v;
        }
    }
    Ok(SindyResidual { loss, grad_z, grad_xi })
}

/// Closed-form least-squares coefficients via the normal equations.
///
/// Exactly collinear library columns are resolved by the Cholesky jitter,
/// which selects the ridge-regularized solution closest to minimum norm.
pub fn least_squares_fit(traj: &LatentTrajectory, library: &SindyLibrary) -> Result<Matrix> {
    let theta = library.theta(&traj.z)?;
    let n_l = library.num_terms();
    if theta.rows() < n_l {
        return Err(Error::Singular(format!(
            "{} samples cannot determine {n_l} coefficients",
            theta.rows()
        )));
    }
    let gram = theta.matmul_transa(&theta)?;
    let rhs = theta.matmul_transa(&traj.z_dot)?;
    let scale = (0..n_l).map(|k| gram.get(k, k)).fold(1.0f64, f64::max);
    let factor = cholesky(&gram, 1e-12 * scale).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::Singular(format!("library matrix is rank deficient: {e}")),
        other => other,
    })?;
    let x = solve_posdef(&factor, &rhs)?;
    let xi = x.transpose();
    if !xi.is_finite() {
        return Err(Error::Singular("non-finite least-squares coefficients".into()));
    }
    Ok(xi)
}

/// Per-parameter coefficient matrices `ξ⁽ⁱ⁾`, each `N_z × N_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTensor {
    latent_dim: usize,
    num_terms: usize,
    slices: Vec<Matrix>,
}

impl CoefficientTensor {
    pub fn new(library: &SindyLibrary) -> Self {
        CoefficientTensor { latent_dim: library.latent_dim, num_terms: library.num_terms(), slices: Vec::new() }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn num_terms(&self) -> usize {
        self.num_terms
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slices(&self) -> &[Matrix] {
        &self.slices
    }

    pub fn slice(&self, i: usize) -> &Matrix {
        &self.slices[i]
    }

    pub fn push(&mut self, xi: Matrix) -> Result<()> {
        if xi.shape() != (self.latent_dim, self.num_terms) {
            return Err(Error::shape(format!(
                "coefficient slice {:?}, expected {:?}",
                xi.shape(),
                (self.latent_dim, self.num_terms)
            )));
        }
        if !xi.is_finite() {
            return Err(Error::Numeric("coefficient slice".into()));
        }
        self.slices.push(xi);
        Ok(())
    }

    /// Values of coefficient `(j, k)` across all slices.
    pub fn coefficient_series(&self, j: usize, k: usize) -> Vec<f64> {
        self.slices.iter().map(|s| s.get(j, k)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.slices.len() * self.latent_dim * self.num_terms
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for s in &self.slices {
            out.extend_from_slice(s.data());
        }
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<usize> {
        let n = self.num_params();
        if flat.len() < n {
            return Err(Error::shape(format!("need {n} coefficients, got {}", flat.len())));
        }
        let per = self.latent_dim * self.num_terms;
        for (i, s) in self.slices.iter_mut().enumerate() {
            s.data_mut().copy_from_slice(&flat[i * per..(i + 1) * per]);
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Rows `exp(−t)`, `exp(−2t)` sampled at `t = n·dt`.
    fn decaying(n: usize, dt: f64) -> Matrix {
        Matrix::from_fn(n, 2, |i, j| (-(j as f64 + 1.0) * i as f64 * dt).exp())
    }

    #[test]
    fn derivative_of_constant_and_ramp() {
        let dt = 0.1;
        let c = Matrix::from_fn(6, 2, |_, j| 3.0 + j as f64);
        assert!(estimate_time_derivative(&c, dt).unwrap().data().iter().all(|v| v.abs() < 1e-12));
        let ramp = Matrix::from_fn(6, 1, |i, _| i as f64 * dt);
        for v in estimate_time_derivative(&ramp, dt).unwrap().data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_quadratic() {
        let dt = 0.05;
        let n = 21;
        let z = Matrix::from_fn(n, 1, |i, _| (i as f64 * dt).powi(2));
        let d = estimate_time_derivative(&z, dt).unwrap();
        for i in 1..n - 1 {
            assert!((d.get(i, 0) - 2.0 * i as f64 * dt).abs() < 1e-12);
        }
        // one-sided second-order stencils are exact on quadratics too
        assert!(d.get(0, 0).abs() < 1e-12);
        assert!((d.get(n - 1, 0) - 2.0 * (n - 1) as f64 * dt).abs() < 1e-12);
        // on a cubic the endpoint error is O(dt²): t³ gives error 2·dt² at t=0
        let cubic = Matrix::from_fn(n, 1, |i, _| (i as f64 * dt).powi(3));
        let d = estimate_time_derivative(&cubic, dt).unwrap();
        assert!((d.get(0, 0) - 0.0).abs() <= 2.0 * dt * dt + 1e-12);
    }

    #[test]
    fn derivative_needs_three_rows() {
        assert!(matches!(estimate_time_derivative(&Matrix::zeros(2, 1), 0.1), Err(Error::Shape(_))));
    }

    #[test]
    fn adjoint_matches_dense_stencil() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 7;
        let dt = 0.3;
        let z = Matrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let g = Matrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        // <D z, g> == <z, Dᵀ g>
        let dz = estimate_time_derivative(&z, dt).unwrap();
        let lhs: f64 = dz.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let adj = derivative_adjoint(&g, dt);
        let rhs: f64 = z.data().iter().zip(adj.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn library_rows() {
        assert_eq!(SindyLibrary::linear(2).build(&[1.5, -2.0]), vec![1.5, -2.0]);
        assert_eq!(SindyLibrary::with_constant(2).build(&[1.5, -2.0]), vec![1.0, 1.5, -2.0]);
        assert_eq!(SindyLibrary::with_constant(3).build(&[0.0; 3]), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(SindyLibrary::with_constant(2).term_names(), vec!["1", "z0", "z1"]);
    }

    #[test]
    fn residual_small_on_exact_linear_dynamics() {
        // ż = A z with A = [[-1, 0.5], [-0.5, -1]]; the exact solution is
        // e^{-t} times a rotation by t/2.
        let dt = 0.001;
        let n = 501;
        let z = Matrix::from_fn(n, 2, |i, j| {
            let t = i as f64 * dt;
            let (s, c) = (0.5 * t).sin_cos();
            let r = (-t).exp();
            if j == 0 { r * c } else { -r * s }
        });
        let a = Matrix::from_rows(&[vec![-1.0, 0.5], vec![-0.5, -1.0]]).unwrap();
        let analytic = z.matmul_transb(&a).unwrap();
        let exact = LatentTrajectory::with_derivative(z.clone(), analytic, dt).unwrap();
        let lib = SindyLibrary::linear(2);
        assert!(sindy_residual(&exact, &a, &lib).unwrap().loss < 1e-20);
        let fd = LatentTrajectory::new(z, dt).unwrap();
        assert!(sindy_residual(&fd, &a, &lib).unwrap().loss < 1e-6);
    }

    #[test]
    fn residual_zero_for_constant_and_zero_xi() {
        let z = Matrix::from_fn(5, 2, |_, j| j as f64 + 0.5);
        let traj = LatentTrajectory::new(z, 0.1).unwrap();
        let r = sindy_residual(&traj, &Matrix::zeros(2, 2), &SindyLibrary::linear(2)).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(matches!(
            sindy_residual(&traj, &Matrix::zeros(2, 3), &SindyLibrary::linear(2)),
            Err(Error::Shape(_))
        ));
    }

    fn check_residual_gradients(lib: SindyLibrary, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt = 0.1;
        let z = Matrix::from_fn(8, lib.latent_dim, |_, _| rng.gen_range(-1.0..1.0));
        let xi = Matrix::from_fn(lib.latent_dim, lib.num_terms(), |_, _| rng.gen_range(-1.0..1.0));
        let traj = LatentTrajectory::new(z.clone(), dt).unwrap();
        let res = sindy_residual(&traj, &xi, &lib).unwrap();
        let h = 1e-6;
        let loss_at = |z: &Matrix, xi: &Matrix| {
            sindy_residual(&LatentTrajectory::new(z.clone(), dt).unwrap(), xi, &lib).unwrap().loss
        };
        for idx in 0..xi.data().len() {
            let mut p = xi.clone();
            p.data_mut()[idx] += h;
            let up = loss_at(&z, &p);
            p.data_mut()[idx] -= 2.0 * h;
            let down = loss_at(&z, &p);
            let fd = (up - down) / (2.0 * h);
            let g = res.grad_xi.data()[idx];
            assert!((fd - g).abs() / g.abs().max(1e-8) < 1e-5, "xi[{idx}] fd {fd} vs {g}");
        }
        for idx in 0..z.data().len() {
            let mut p = z.clone();
            p.data_mut()[idx] += h;
            let up = loss_at(&p, &xi);
            p.data_mut()[idx] -= 2.0 * h;
            let down = loss_at(&p, &xi);
            let fd = (up - down) / (2.0 * h);
            let g = res.grad_z.data()[idx];
            assert!((fd - g).abs() / g.abs().max(1e-8) < 1e-5, "z[{idx}] fd {fd} vs {g}");
        }
    }

    #[test]
    fn residual_gradients_match_finite_differences() {
        check_residual_gradients(SindyLibrary::linear(2), 1);
        check_residual_gradients(SindyLibrary::with_constant(3), 2);
    }

    #[test]
    fn least_squares_recovers_diagonal_decay() {
        let dt = 0.01;
        let traj = LatentTrajectory::new(decaying(201, dt), dt).unwrap();
        let xi = least_squares_fit(&traj, &SindyLibrary::linear(2)).unwrap();
        let expected = [[-1.0, 0.0], [0.0, -2.0]];
        for j in 0..2 {
            for k in 0..2 {
                assert!((xi.get(j, k) - expected[j][k]).abs() < 1e-3, "{xi:?}");
            }
        }
    }

    #[test]
    fn least_squares_constant_trajectory_with_constant_term() {
        let z = Matrix::from_fn(11, 2, |_, j| 0.3 + j as f64);
        let traj = LatentTrajectory::new(z, 0.1).unwrap();
        let xi = least_squares_fit(&traj, &SindyLibrary::with_constant(2)).unwrap();
        assert!(xi.data().iter().all(|v| v.abs() < 1e-9), "{xi:?}");
    }

    #[test]
    fn least_squares_underdetermined() {
        let traj = LatentTrajectory::new(Matrix::from_fn(3, 3, |i, j| (i * j) as f64), 0.1).unwrap();
        assert!(matches!(least_squares_fit(&traj, &SindyLibrary::with_constant(3)), Err(Error::Singular(_))));
    }

    #[test]
    fn least_squares_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dt = 0.05;
        let z = Matrix::from_fn(40, 3, |i, j| ((i as f64) * dt * (j as f64 + 1.0)).sin() + rng.gen_range(-0.05..0.05));
        let traj = LatentTrajectory::new(z, dt).unwrap();
        let lib = SindyLibrary::linear(3);
        let xi = least_squares_fit(&traj, &lib).unwrap();
        let best = sindy_residual(&traj, &xi, &lib).unwrap().loss;
        for _ in 0..100 {
            let p = Matrix::from_fn(3, 3, |j, k| xi.get(j, k) + rng.gen_range(-1e-3..1e-3));
            assert!(sindy_residual(&traj, &p, &lib).unwrap().loss >= best);
        }
    }

    #[test]
    fn tensor_flat_roundtrip() {
        let lib = SindyLibrary::linear(2);
        let mut t = CoefficientTensor::new(&lib);
        t.push(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
        t.push(Matrix::identity(2)).unwrap();
        assert!(matches!(t.push(Matrix::zeros(3, 2)), Err(Error::Shape(_))));
        let mut flat = Vec::new();
        t.flatten_into(&mut flat);
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.coefficient_series(1, 0), vec![3.0, 0.0]);
        let mut u = t.clone();
        u.assign_flat(&flat).unwrap();
        assert_eq!(t, u);
    }

    proptest! {
        #[test]
        fn derivative_exact_on_linear_in_time(seed in any::<u64>(), n in 3usize..30, dt in 0.001f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let slopes: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let offsets: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let z = Matrix::from_fn(n, 3, |i, j| offsets[j] + slopes[j] * i as f64 * dt);
            let d = estimate_time_derivative(&z, dt).unwrap();
            for i in 0..n {
                for j in 0..3 {
                    prop_assert!((d.get(i, j) - slopes[j]).abs() < 1e-12 * (1.0 + offsets[j].abs() / dt));
                }
            }
        }

        #[test]
        fn linear_library_is_identity(row in proptest::collection::vec(-1e6f64..1e6, 1..8)) {
            prop_assert_eq!(SindyLibrary::linear(row.len()).build(&row), row);
        }
    }
}
