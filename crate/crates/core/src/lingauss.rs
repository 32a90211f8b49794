//! Stable linear-Gaussian dynamics `x_{t+1} = A x_t + ξ_t`, `ξ_t ~ N(0, Q)`.
//!
//! The state is `x = (s, e_1, …, e_N)`: one system coordinate followed by N
//! environment modes. `A` is upper block-triangular,
//!
//! ```text
//!     | a_s   cᵀ  |          | q_s   0       |
//! A = |  0    A_e |,    Q =  |  0    q_e I_N |
//! ```
//!
//! with `A_e = diag(a_e,1 … a_e,N)`, so the spectral radius is the largest
//! diagonal entry in absolute value.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};
use crate::rng;

/// Lower end of the environment eigenvalue range used by [`build_highdim_spec`].
pub const HIGHDIM_AE_MIN: f64 = 0.3;
/// Upper end of the environment eigenvalue range used by [`build_highdim_spec`].
pub const HIGHDIM_AE_MAX: f64 = 0.98;

/// Vectorized direct solve is used up to this state dimension; the Kronecker
/// system has `n² × n²` entries.
pub const DIRECT_VEC_MAX_DIM: usize = 32;

const FIXED_POINT_TOL: f64 = 1e-13;
const FIXED_POINT_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "FullSpecRepr")]
pub struct DynamicsSpec {
    a_s: f64,
    a_e_modes: Vec<f64>,
    coupling: Vec<f64>,
    q_s: f64,
    q_e: f64,
}

impl DynamicsSpec {
    pub fn new(a_s: f64, a_e_modes: Vec<f64>, coupling: Vec<f64>, q_s: f64, q_e: f64) -> Result<Self> {
        if a_e_modes.is_empty() {
            return Err(Error::InvalidArgument("at least one environment mode is required".into()));
        }
        if coupling.len() != a_e_modes.len() {
            return Err(Error::DimensionMismatch {
                expected: a_e_modes.len(),
                got: coupling.len(),
            });
        }
        let all = std::iter::once(a_s).chain(a_e_modes.iter().copied()).chain(coupling.iter().copied());
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite dynamics parameter".into()));
        }
        if !(q_s > 0.0 && q_e > 0.0) || !q_s.is_finite() || !q_e.is_finite() {
            return Err(Error::InvalidNoise { q_s, q_e });
        }
        let spec = Self {
            a_s,
            a_e_modes,
            coupling,
            q_s,
            q_e,
        };
        let radius = spec.spectral_radius();
        if radius >= 1.0 {
            return Err(Error::StabilityViolation { radius });
        }
        Ok(spec)
    }

    /// Two-dimensional system `A = [[a_s, c], [0, a_e]]`, `Q = diag(q_s, q_e)`.
    pub fn new_2d(a_s: f64, c: f64, a_e: f64, q_s: f64, q_e: f64) -> Result<Self> {
        Self::new(a_s, vec![a_e], vec![c], q_s, q_e)
    }

    pub fn a_s(&self) -> f64 {
        self.a_s
    }
    pub fn a_e_modes(&self) -> &[f64] {
        &self.a_e_modes
    }
    pub fn coupling(&self) -> &[f64] {
        &self.coupling
    }
    pub fn q_s(&self) -> f64 {
        self.q_s
    }
    pub fn q_e(&self) -> f64 {
        self.q_e
    }
    /// Number of environment modes N.
    pub fn n_env(&self) -> usize {
        self.a_e_modes.len()
    }
    /// State dimension N + 1.
    pub fn dim(&self) -> usize {
        self.n_env() + 1
    }
    pub fn is_2d(&self) -> bool {
        self.n_env() == 1
    }
    /// Noise ratio ε = q_s / q_e.
    pub fn noise_ratio(&self) -> f64 {
        self.q_s / self.q_e
    }

    /// `(a_e, c)` of a 2D spec.
    pub fn env_2d(&self) -> Option<(f64, f64)> {
        self.is_2d().then(|| (self.a_e_modes[0], self.coupling[0]))
    }

    /// Exact spectral radius of the block-triangular `A`.
    pub fn spectral_radius(&self) -> f64 {
        self.a_e_modes.iter().fold(self.a_s.abs(), |m, a| m.max(a.abs()))
    }

    /// Sufficient stability filter `|c| < 1 − max(|a_s|, |a_e|)` applied to the
    /// 2D sweep grids. `None` for N > 1.
    pub fn satisfies_grid_filter(&self) -> Option<bool> {
        self.env_2d()
            .map(|(a_e, c)| c.abs() < 1.0 - self.a_s.abs().max(a_e.abs()))
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        a[(0, 0)] = self.a_s;
        for (i, (&ae, &c)) in self.a_e_modes.iter().zip(&self.coupling).enumerate() {
            a[(0, i + 1)] = c;
            a[(i + 1, i + 1)] = ae;
        }
        a
    }

    pub fn q_diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| if i == 0 { self.q_s } else { self.q_e })
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.q_diagonal())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecRepr {
    Full(FullSpecRepr),
    Compact(CompactSpecRepr),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FullSpecRepr {
    n_env: usize,
    a_s: f64,
    a_e_modes: Vec<f64>,
    coupling: Vec<f64>,
    q_s: f64,
    q_e: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompactSpecRepr {
    a_s: f64,
    a_e: f64,
    c: f64,
    q_s: f64,
    q_e: f64,
}

impl TryFrom<SpecRepr> for DynamicsSpec {
    type Error = Error;

    fn try_from(repr: SpecRepr) -> Result<Self> {
        match repr {
            SpecRepr::Full(f) => {
                if f.n_env != f.a_e_modes.len() {
                    return Err(Error::DimensionMismatch {
                        expected: f.n_env,
                        got: f.a_e_modes.len(),
                    });
                }
                DynamicsSpec::new(f.a_s, f.a_e_modes, f.coupling, f.q_s, f.q_e)
            }
            SpecRepr::Compact(c) => DynamicsSpec::new_2d(c.a_s, c.c, c.a_e, c.q_s, c.q_e),
        }
    }
}

impl From<DynamicsSpec> for FullSpecRepr {
    fn from(s: DynamicsSpec) -> Self {
        FullSpecRepr {
            n_env: s.n_env(),
            a_s: s.a_s,
            a_e_modes: s.a_e_modes,
            coupling: s.coupling,
            q_s: s.q_s,
            q_e: s.q_e,
        }
    }
}

/// Which solver produced a [`CovarianceSolution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMethod {
    ClosedForm2d,
    DirectVec,
    /// Smith doubling, `X ← X + A_k X A_kᵀ`, `A_k ← A_k²`.
    Doubling,
    FixedPoint,
}

/// Stationary covariance Σ solving `Σ = A Σ Aᵀ + Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSolution {
    pub sigma: DMatrix<f64>,
    /// ‖Σ − AΣAᵀ − Q‖_F
    pub residual_norm: f64,
    pub method: CovarianceMethod,
}

impl CovarianceSolution {
    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }
    pub fn s11(&self) -> f64 {
        self.sigma[(0, 0)]
    }
    pub fn s12(&self) -> f64 {
        self.sigma[(0, 1)]
    }
    pub fn s22(&self) -> f64 {
        self.sigma[(1, 1)]
    }

    /// Residual bound `‖Σ − AΣAᵀ − Q‖_F < 1e-10 (1 + ‖Σ‖_F)`.
    pub fn residual_ok(&self) -> bool {
        self.residual_norm < 1e-10 * (1.0 + self.sigma.norm())
    }
}

pub fn lyapunov_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    (sigma - a * sigma * a.transpose() - q).norm()
}

pub fn spectral_radius(spec: &DynamicsSpec) -> f64 {
    spec.spectral_radius()
}

fn finish(a: &DMatrix<f64>, q: &DMatrix<f64>, sigma: DMatrix<f64>, method: CovarianceMethod) -> CovarianceSolution {
    let sigma = symmetrize(&sigma);
    let residual_norm = lyapunov_residual(a, q, &sigma);
    CovarianceSolution {
        sigma,
        residual_norm,
        method,
    }
}

/// Closed-form Σ for a 2D upper-triangular spec.
pub fn solve_covariance_closed_form(spec: &DynamicsSpec) -> Result<CovarianceSolution> {
    let (a_e, c) = spec.env_2d().ok_or(Error::DimensionMismatch {
        expected: 2,
        got: spec.dim(),
    })?;
    let (a_s, q_s, q_e) = (spec.a_s(), spec.q_s(), spec.q_e());
    let s22 = q_e / (1.0 - a_e * a_e);
    let s12 = c * a_e * q_e / ((1.0 - a_e * a_e) * (1.0 - a_s * a_e));
    let s11 = (c * c * q_e * (1.0 + a_s * a_e) / ((1.0 - a_e * a_e) * (1.0 - a_s * a_e)) + q_s) / (1.0 - a_s * a_s);
    let sigma = DMatrix::from_row_slice(2, 2, &[s11, s12, s12, s22]);
    Ok(finish(&spec.a_matrix(), &spec.q_matrix(), sigma, CovarianceMethod::ClosedForm2d))
}

/// Σ for any spec via [`solve_discrete_lyapunov`].
pub fn solve_covariance_general(spec: &DynamicsSpec) -> Result<CovarianceSolution> {
    solve_discrete_lyapunov(&spec.a_matrix(), &spec.q_matrix())
}

/// Closed form for 2D specs, the general solver otherwise.
pub fn solve_covariance(spec: &DynamicsSpec) -> Result<CovarianceSolution> {
    if spec.is_2d() {
        solve_covariance_closed_form(spec)
    } else {
        solve_covariance_general(spec)
    }
}

/// Solve `Σ = A Σ Aᵀ + Q` for an arbitrary stable square `A`.
///
/// Dimension ≤ [`DIRECT_VEC_MAX_DIM`]: LU solve of `(I − A⊗A) vec Σ = vec Q`.
/// Larger: Smith doubling. Either result must pass the residual bound;
/// otherwise the plain fixed-point iteration takes over from the best iterate.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<CovarianceSolution> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.nrows(),
        });
    }
    let radius = a
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if radius >= 1.0 {
        return Err(Error::StabilityViolation { radius });
    }

    let first = if n <= DIRECT_VEC_MAX_DIM {
        direct_vec(a, q)
    } else {
        Some(doubling(a, q))
    };
    if let Some(sol) = first {
        if sol.residual_ok() {
            return Ok(sol);
        }
        return fixed_point(a, q, sol.sigma);
    }
    fixed_point(a, q, q.clone())
}

fn direct_vec(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<CovarianceSolution> {
    let n = a.nrows();
    let k = DMatrix::identity(n * n, n * n) - a.kronecker(a);
    let rhs = DVector::from_column_slice(q.as_slice());
    let x = k.lu().solve(&rhs)?;
    let sigma = DMatrix::from_column_slice(n, n, x.as_slice());
    Some(finish(a, q, sigma, CovarianceMethod::DirectVec))
}

fn doubling(a: &DMatrix<f64>, q: &DMatrix<f64>) -> CovarianceSolution {
    let mut x = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let step = &ak * &x * ak.transpose();
        let done = step.norm() <= 1e-17 * x.norm();
        x += step;
        if done {
            break;
        }
        ak = &ak * &ak;
    }
    finish(a, q, x, CovarianceMethod::Doubling)
}

fn fixed_point(a: &DMatrix<f64>, q: &DMatrix<f64>, start: DMatrix<f64>) -> Result<CovarianceSolution> {
    let at = a.transpose();
    let mut sigma = start;
    for _ in 0..FIXED_POINT_MAX_ITER {
        let next = a * &sigma * &at + q;
        let change = (&next - &sigma).norm();
        sigma = next;
        if change <= FIXED_POINT_TOL * (1.0 + sigma.norm()) {
            let sol = finish(a, q, sigma, CovarianceMethod::FixedPoint);
            if sol.residual_ok() {
                return Ok(sol);
            }
            return Err(Error::ConvergenceFailure {
                iterations: FIXED_POINT_MAX_ITER,
                residual: sol.residual_norm,
            });
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: FIXED_POINT_MAX_ITER,
        residual: lyapunov_residual(a, q, &sigma),
    })
}

/// N environment modes evenly spaced on [0.3, 0.98] (both endpoints
/// included; N = 1 uses the upper endpoint), coupling row `c/√N · 1`,
/// `Q_e = q_e I`.
pub fn build_highdim_spec(n_env: usize, a_s: f64, q_s: f64, c: f64, q_e: f64) -> Result<DynamicsSpec> {
    if n_env == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let a_e_modes = if n_env == 1 {
        vec![HIGHDIM_AE_MAX]
    } else {
        let step = (HIGHDIM_AE_MAX - HIGHDIM_AE_MIN) / (n_env - 1) as f64;
        (0..n_env).map(|i| HIGHDIM_AE_MIN + step * i as f64).collect()
    };
    let entry = c / (n_env as f64).sqrt();
    DynamicsSpec::new(a_s, a_e_modes, vec![entry; n_env], q_s, q_e)
}

/// How consecutive states in a [`TrajectoryBatch`] are related.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSemantics {
    DiscreteMap,
    Euler,
}

/// `count` trajectories of `length` states of dimension `dim`, stored
/// contiguously (trajectory-major, then time, then coordinate).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    dim: usize,
    count: usize,
    length: usize,
    data: Vec<f64>,
    pub seed: u64,
    pub semantics: StepSemantics,
}

impl TrajectoryBatch {
    pub fn from_data(dim: usize, count: usize, length: usize, data: Vec<f64>, seed: u64, semantics: StepSemantics) -> Result<Self> {
        if data.len() != dim * count * length {
            return Err(Error::DimensionMismatch {
                expected: dim * count * length,
                got: data.len(),
            });
        }
        Ok(Self {
            dim,
            count,
            length,
            data,
            seed,
            semantics,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn count(&self) -> usize {
        self.count
    }
    pub fn length(&self) -> usize {
        self.length
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// All states of trajectory `i`, flattened.
    pub fn trajectory(&self, i: usize) -> &[f64] {
        let stride = self.length * self.dim;
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn state(&self, i: usize, t: usize) -> &[f64] {
        let start = (i * self.length + t) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.length * self.dim)
    }

    /// New batch holding the trajectories at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> TrajectoryBatch {
        let mut data = Vec::with_capacity(indices.len() * self.length * self.dim);
        for &i in indices {
            data.extend_from_slice(self.trajectory(i));
        }
        TrajectoryBatch {
            dim: self.dim,
            count: indices.len(),
            length: self.length,
            data,
            seed: self.seed,
            semantics: self.semantics,
        }
    }

    /// First `round(fraction · count)` trajectories (at least one on each side
    /// when `count ≥ 2`) and the remainder.
    pub fn split(&self, fraction: f64) -> (TrajectoryBatch, TrajectoryBatch) {
        let n_first = ((fraction * self.count as f64).round() as usize).clamp(1, self.count.saturating_sub(1).max(1));
        let first: Vec<usize> = (0..n_first).collect();
        let rest: Vec<usize> = (n_first..self.count).collect();
        (self.select(&first), self.select(&rest))
    }
}

/// Stationary trajectories of `spec`.
///
/// `x_0 = Σ^{1/2} z` with the eigendecomposition square root, then
/// `x_{t+1} = A x_t + ξ_t`. Trajectory `i` draws from substream `i` of `seed`.
pub fn sample_trajectories(spec: &DynamicsSpec, count: usize, length: usize, seed: u64) -> Result<TrajectoryBatch> {
    if count == 0 || length == 0 {
        return Err(Error::InvalidArgument("count and length must be positive".into()));
    }
    let cov = solve_covariance(spec)?;
    let root = linalg::sym_psd_sqrt(&cov.sigma)?;
    let a = spec.a_matrix();
    let noise_sd: Vec<f64> = spec.q_diagonal().iter().map(|q| q.sqrt()).collect();
    let dim = spec.dim();

    let mut data = Vec::with_capacity(count * length * dim);
    let mut z = DVector::zeros(dim);
    for i in 0..count {
        let mut rng = rng::stream(seed, i as u64);
        for zj in z.iter_mut() {
            *zj = rng::normal(&mut rng);
        }
        let mut x = &root * &z;
        data.extend_from_slice(x.as_slice());
        for _ in 1..length {
            let mut next = &a * &x;
            for (xj, sd) in next.iter_mut().zip(&noise_sd) {
                *xj += sd * rng::normal(&mut rng);
            }
            x = next;
            data.extend_from_slice(x.as_slice());
        }
    }
    TrajectoryBatch::from_data(dim, count, length, data, seed, StepSemantics::DiscreteMap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eta0() -> DynamicsSpec {
        DynamicsSpec::new_2d(0.05, -0.90, 0.98, 0.05, 0.10).unwrap()
    }

    #[test]
    fn spectral_radius_is_max_diagonal() {
        assert_eq!(spectral_radius(&eta0()), 0.98);
        assert_eq!(spectral_radius(&DynamicsSpec::new_2d(0.9, 0.0, 0.3, 1.0, 1.0).unwrap()), 0.9);
        let hd = build_highdim_spec(10, 0.05, 0.05, -0.95, 0.10).unwrap();
        assert!((spectral_radius(&hd) - 0.98).abs() < 1e-15);
    }

    #[test]
    fn counterexample_covariance() {
        let sol = solve_covariance_closed_form(&eta0()).unwrap();
        assert!((sol.s11() - 2.312).abs() < 1e-3);
        assert!((sol.s12() + 2.342).abs() < 1e-3);
        assert!((sol.s22() - 2.525).abs() < 1e-3);
        assert!(sol.residual_ok());
        assert_eq!(sol.method, CovarianceMethod::ClosedForm2d);
    }

    #[test]
    fn decoupled_covariance_is_diagonal() {
        let spec = DynamicsSpec::new_2d(0.6, 0.0, 0.2, 0.3, 0.7).unwrap();
        let sol = solve_covariance_closed_form(&spec).unwrap();
        assert_eq!(sol.s12(), 0.0);
        assert!((sol.s11() - 0.3 / (1.0 - 0.36)).abs() < 1e-15);
    }

    #[test]
    fn zero_dynamics_give_q() {
        let spec = DynamicsSpec::new_2d(0.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        let sol = solve_covariance_closed_form(&spec).unwrap();
        assert_eq!(sol.sigma, DMatrix::identity(2, 2));
        let gen = solve_covariance_general(&spec).unwrap();
        assert!((gen.sigma - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn general_matches_closed_form_on_counterexample() {
        let closed = solve_covariance_closed_form(&eta0()).unwrap();
        let general = solve_covariance_general(&eta0()).unwrap();
        assert_eq!(general.method, CovarianceMethod::DirectVec);
        assert!((closed.sigma - general.sigma).amax() < 1e-10);
    }

    #[test]
    fn large_systems_use_doubling() {
        let spec = build_highdim_spec(50, 0.05, 0.05, -0.95, 0.10).unwrap();
        let sol = solve_covariance_general(&spec).unwrap();
        assert_eq!(sol.method, CovarianceMethod::Doubling);
        assert!(sol.residual_ok());
        let direct = solve_covariance_general(&build_highdim_spec(20, 0.05, 0.05, -0.95, 0.10).unwrap()).unwrap();
        assert_eq!(direct.method, CovarianceMethod::DirectVec);
        assert!(direct.residual_ok());
    }

    #[test]
    fn fixed_point_fallback_converges() {
        let spec = build_highdim_spec(3, 0.2, 0.05, 0.4, 0.10).unwrap();
        let sol = fixed_point(&spec.a_matrix(), &spec.q_matrix(), spec.q_matrix()).unwrap();
        assert_eq!(sol.method, CovarianceMethod::FixedPoint);
        let direct = solve_covariance_general(&spec).unwrap();
        assert!((sol.sigma - direct.sigma).amax() < 1e-10);
    }

    #[test]
    fn general_solver_accepts_non_triangular_a() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, -0.3, 0.4, 0.1, 0.1, 0.0, -0.6]);
        let q = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.5, 0.0, 0.0, 0.0, 0.3]);
        let sol = solve_discrete_lyapunov(&a, &q).unwrap();
        assert!(sol.residual_ok());
        let unstable = DMatrix::from_row_slice(2, 2, &[0.0, 1.2, -1.2, 0.0]);
        assert!(matches!(
            solve_discrete_lyapunov(&unstable, &DMatrix::identity(2, 2)),
            Err(Error::StabilityViolation { .. })
        ));
    }

    #[test]
    fn constructor_errors() {
        assert!(matches!(
            DynamicsSpec::new_2d(1.0, 0.0, 0.5, 1.0, 1.0),
            Err(Error::StabilityViolation { .. })
        ));
        assert!(matches!(
            DynamicsSpec::new_2d(0.5, 0.0, -1.1, 1.0, 1.0),
            Err(Error::StabilityViolation { .. })
        ));
        assert!(matches!(DynamicsSpec::new_2d(0.5, 0.0, 0.5, 0.0, 1.0), Err(Error::InvalidNoise { .. })));
        assert!(matches!(DynamicsSpec::new_2d(0.5, 0.0, 0.5, 1.0, -1.0), Err(Error::InvalidNoise { .. })));
        assert!(solve_covariance_closed_form(&build_highdim_spec(3, 0.1, 0.1, 0.1, 0.1).unwrap()).is_err());
    }

    #[test]
    fn grid_filter() {
        assert_eq!(DynamicsSpec::new_2d(0.5, 0.4, 0.3, 1.0, 1.0).unwrap().satisfies_grid_filter(), Some(true));
        assert_eq!(DynamicsSpec::new_2d(0.5, 0.5, 0.3, 1.0, 1.0).unwrap().satisfies_grid_filter(), Some(false));
        assert_eq!(eta0().satisfies_grid_filter(), Some(false));
        assert_eq!(build_highdim_spec(2, 0.1, 0.1, 0.1, 0.1).unwrap().satisfies_grid_filter(), None);
    }

    #[test]
    fn highdim_construction() {
        let s = build_highdim_spec(2, 0.05, 0.05, 0.7, 0.1).unwrap();
        assert_eq!(s.a_e_modes(), &[0.3, 0.98]);
        assert!((s.coupling()[0] - 0.7 / 2f64.sqrt()).abs() < 1e-15);
        let s10 = build_highdim_spec(10, 0.05, 0.05, -0.95, 0.10).unwrap();
        assert!(s10.coupling().iter().all(|&c| (c + 0.300_416).abs() < 1e-4));
        assert!((s10.a_e_modes()[9] - 0.98).abs() < 1e-15);
        assert_eq!(s10.q_diagonal().as_slice()[1..], [0.10; 10]);
        assert_eq!(build_highdim_spec(1, 0.05, 0.05, 0.1, 0.1).unwrap().a_e_modes(), &[0.98]);
        assert!(build_highdim_spec(0, 0.05, 0.05, 0.1, 0.1).is_err());
    }

    #[test]
    fn json_forms() {
        let spec = eta0();
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(json["n_env"], 1);
        assert_eq!(json["a_e_modes"][0], 0.98);
        let back: DynamicsSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, spec);
        let compact: DynamicsSpec =
            serde_json::from_str(r#"{"a_s":0.05,"a_e":0.98,"c":-0.9,"q_s":0.05,"q_e":0.1}"#).unwrap();
        assert_eq!(compact, spec);
        let bad = serde_json::from_str::<DynamicsSpec>(r#"{"a_s":0.05,"a_e":1.5,"c":0.0,"q_s":0.05,"q_e":0.1}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_trajectories(&eta0(), 5, 7, 42).unwrap();
        let b = sample_trajectories(&eta0(), 5, 7, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_trajectories(&eta0(), 5, 7, 43).unwrap();
        assert_ne!(a.data(), c.data());
        assert_eq!(a.state(2, 3), &a.trajectory(2)[6..8]);
    }

    #[test]
    fn noiseless_contraction_decays() {
        let spec = DynamicsSpec::new_2d(0.5, 0.0, 0.5, 1e-12, 1e-12).unwrap();
        let batch = sample_trajectories(&spec, 3, 10, 1).unwrap();
        for i in 0..3 {
            let x0 = batch.state(i, 0).to_vec();
            for t in 1..10 {
                let x = batch.state(i, t);
                for j in 0..2 {
                    let expected = x0[j] * 0.5f64.powi(t as i32);
                    assert!((x[j] - expected).abs() < 1e-5, "t={t} j={j}");
                }
            }
        }
    }

    #[test]
    fn split_by_trajectory() {
        let batch = sample_trajectories(&eta0(), 10, 3, 0).unwrap();
        let (train, val) = batch.split(0.8);
        assert_eq!((train.count(), val.count()), (8, 2));
        assert_eq!(val.trajectory(0), batch.trajectory(8));
    }
}
