//! Risk minimization over unit-norm encoders and the Bayes-optimal encoder.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::linalg::sym_psd_sqrt;
use crate::linalg::{self, sorted_eigen};
use crate::lingauss::{CovarianceSolution, DynamicsSpec};
use crate::risk::{self, Encoder, Objective, RiskEvaluation, RiskLandscape};
use crate::rng;

pub const DEFAULT_RESTARTS: usize = 500;
pub const STATIONARITY_TOL: f64 = 1e-9;
/// Relative error allowed between the analytic and finite-difference gradient
/// at a returned solution.
pub const GRADIENT_CHECK_TOL: f64 = 1e-5;

const ARMIJO_SLOPE: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct SphereOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl SphereOptions {
    pub fn new(restarts: usize, seed: u64) -> Self {
        Self {
            restarts,
            seed,
            max_iter: 20_000,
            grad_tol: STATIONARITY_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSolution {
    pub encoder: Encoder,
    pub risk: RiskEvaluation,
    pub restarts_used: usize,
    pub converged_fraction: f64,
    pub fidelity: f64,
    /// ‖(I − wwᵀ)∇f(w)‖ at the returned encoder.
    pub projected_gradient: f64,
}

/// JSON form of an [`EncoderSolution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSolutionRecord {
    pub w: Vec<f64>,
    pub theta_deg: Option<f64>,
    pub risk: f64,
    pub alpha_star: f64,
    pub fidelity: f64,
    pub restarts_used: usize,
}

impl EncoderSolution {
    pub fn theta_deg(&self) -> Option<f64> {
        self.encoder.theta().map(f64::to_degrees)
    }

    pub fn record(&self) -> EncoderSolutionRecord {
        EncoderSolutionRecord {
            w: self.encoder.w().iter().copied().collect(),
            theta_deg: self.theta_deg(),
            risk: self.risk.value,
            alpha_star: self.risk.alpha_star,
            fidelity: self.fidelity,
            restarts_used: self.restarts_used,
        }
    }
}

#[derive(Debug, Clone)]
struct LocalResult {
    w: DVector<f64>,
    value: f64,
    projected_gradient: f64,
    converged: bool,
}

fn project(w: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    g - w * w.dot(g)
}

/// Projected gradient descent on the sphere from `w0`.
///
/// Each trial step `w − α·pg` is renormalized; `α` starts from the
/// Barzilai-Borwein estimate and is halved until the Armijo condition holds
/// (slope 1e-4, plus a few ulps of slack so round-off cannot stall the
/// search near a stationary point).
fn descend(landscape: &RiskLandscape, objective: Objective, w0: DVector<f64>, opts: &SphereOptions) -> Result<LocalResult> {
    let mut w = w0.normalize();
    let (mut f, g) = landscape.value_and_gradient(&w, objective)?;
    let mut pg = project(&w, &g);
    let mut alpha = 1.0;
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;

    for _ in 0..opts.max_iter {
        let pg_norm = pg.norm();
        if pg_norm < opts.grad_tol {
            return Ok(LocalResult {
                w,
                value: f,
                projected_gradient: pg_norm,
                converged: true,
            });
        }
        if let Some((w_prev, pg_prev)) = &prev {
            let s = &w - w_prev;
            let y = &pg - pg_prev;
            let sy = s.dot(&y);
            if sy > 0.0 {
                alpha = (s.norm_squared() / sy).clamp(1e-10, 1e10);
            } else {
                alpha = (alpha * 2.0).min(1e10);
            }
        }
        let slack = 8.0 * f64::EPSILON * f.abs().max(1e-300);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = (&w - &pg * alpha).normalize();
            let ft = landscape.value(&trial, objective)?;
            if ft <= f - ARMIJO_SLOPE * alpha * pg_norm * pg_norm + slack {
                accepted = Some(trial);
                break;
            }
            alpha *= ARMIJO_SHRINK;
        }
        let Some(next) = accepted else {
            break;
        };
        let (fn_, g) = landscape.value_and_gradient(&next, objective)?;
        let pg_next = project(&next, &g);
        prev = Some((std::mem::replace(&mut w, next), std::mem::replace(&mut pg, pg_next)));
        f = fn_;
    }
    let pg_norm = pg.norm();
    Ok(LocalResult {
        w,
        value: f,
        projected_gradient: pg_norm,
        converged: pg_norm < opts.grad_tol,
    })
}

fn restart_start(dim: usize, seed: u64, index: usize) -> DVector<f64> {
    if index == 0 {
        // first restart descends from the system readout
        let mut w = DVector::zeros(dim);
        w[0] = 1.0;
        return w;
    }
    let mut r = rng::stream(seed, index as u64);
    loop {
        let v = DVector::from_fn(dim, |_, _| rng::normal(&mut r));
        if v.norm() > 1e-8 {
            return v;
        }
    }
}

/// Distance between the analytic gradient and central finite differences
/// with step `h`, relative to the larger of the two norms.
///
/// The denominator is floored at `1e-3·(1 + |f|)`: scale-invariant
/// objectives have a vanishing gradient at their minimizers, where a pure
/// relative error only measures round-off.
pub fn gradient_fd_error(landscape: &RiskLandscape, objective: Objective, w: &DVector<f64>, h: f64) -> Result<f64> {
    let (f, g) = landscape.value_and_gradient(w, objective)?;
    let mut fd = DVector::zeros(w.len());
    for i in 0..w.len() {
        let mut plus = w.clone();
        let mut minus = w.clone();
        plus[i] += h;
        minus[i] -= h;
        fd[i] = (landscape.value(&plus, objective)? - landscape.value(&minus, objective)?) / (2.0 * h);
    }
    Ok((&fd - &g).norm() / g.norm().max(fd.norm()).max(1e-3 * (1.0 + f.abs())))
}

/// Minimize `objective` over unit vectors from `opts.restarts` starting points.
///
/// Restart 0 starts at the system readout and the rest at seeded uniform
/// points on the sphere, so the result never exceeds the risk at `w_NZ`.
/// In 2D an extra descent starts from the refined angular-profile minimum.
pub fn minimize_on_sphere(landscape: &RiskLandscape, objective: Objective, opts: &SphereOptions) -> Result<EncoderSolution> {
    if opts.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    if let Objective::Ib { beta } = objective {
        if !(beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {beta}")));
        }
    }
    let dim = landscape.dim();
    let mut results: Vec<LocalResult> = (0..opts.restarts)
        .into_par_iter()
        .map(|i| descend(landscape, objective, restart_start(dim, opts.seed, i), opts))
        .collect::<Result<Vec<_>>>()?;
    // in 2D one more descent starts at the refined angular minimum, which
    // can sit in a basin a few degrees wide next to an axis
    let profile = if dim == 2 {
        let profile = risk::profile_of(landscape, objective, risk::DEFAULT_ANGULAR_POINTS)?;
        let t = profile.refined_theta;
        results.push(descend(landscape, objective, DVector::from_vec(vec![t.cos(), t.sin()]), opts)?);
        Some(profile)
    } else {
        None
    };

    let converged = results[..opts.restarts].iter().filter(|r| r.converged).count();
    // ties resolve to the lowest restart index, independent of scheduling
    let best = results
        .iter()
        .filter(|r| r.converged)
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| Error::NoConvergence {
            best_gradient: results.iter().map(|r| r.projected_gradient).fold(f64::INFINITY, f64::min),
        })?;

    let encoder = Encoder::normalized(best.w.clone())?.canonical();
    let fd_err = gradient_fd_error(landscape, objective, encoder.w(), 1e-6)?;
    if fd_err > GRADIENT_CHECK_TOL {
        return Err(Error::CrossCheck(format!(
            "analytic gradient disagrees with finite differences (relative error {fd_err:e})"
        )));
    }
    let risk = landscape.evaluate(encoder.w(), objective)?;

    if let Some(profile) = profile {
        if risk.value > profile.refined_value + 1e-9 {
            return Err(Error::CrossCheck(format!(
                "sphere minimum {} exceeds the angular minimum {}",
                risk.value, profile.refined_value
            )));
        }
    }

    Ok(EncoderSolution {
        fidelity: encoder.fidelity(),
        encoder,
        risk,
        restarts_used: opts.restarts,
        converged_fraction: converged as f64 / opts.restarts as f64,
        projected_gradient: best.projected_gradient,
    })
}

/// [`minimize_on_sphere`] for a spec and its covariance.
pub fn minimize_sphere(
    spec: &DynamicsSpec,
    cov: &CovarianceSolution,
    objective: Objective,
    restarts: usize,
    seed: u64,
) -> Result<EncoderSolution> {
    let landscape = RiskLandscape::new(spec, cov)?;
    minimize_on_sphere(&landscape, objective, &SphereOptions::new(restarts, seed))
}

/// Leading eigenpair of `M = Σ^{1/2} AᵀA Σ^{1/2}` and the encoder
/// `w ∝ Σ^{-1/2} u₁` minimizing the full-state one-step prediction error.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesSolution {
    pub encoder: Encoder,
    pub leading_eigenvalue: f64,
    /// λ_max / λ_min of M (infinite when M is singular).
    pub m_matrix_condition: f64,
    /// ‖M u − λ u‖ / (|λ| ‖u‖)
    pub eigen_residual: f64,
    /// Top two eigenvalues agree to 1e-10 relative; the encoder is then one
    /// arbitrary member of the leading eigenspace.
    pub degenerate_spectrum: bool,
}

/// Full-state prediction error `tr Σ − wᵀΣAᵀAΣw / wᵀΣw` of the encoder `w`.
pub fn full_state_mse(a: &DMatrix<f64>, sigma: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    let sw = sigma * w;
    let asw = a * &sw;
    sigma.trace() - asw.norm_squared() / w.dot(&sw)
}

pub fn bayes_optimal(spec: &DynamicsSpec, cov: &CovarianceSolution) -> Result<BayesSolution> {
    bayes_optimal_from(&spec.a_matrix(), &cov.sigma)
}

pub fn bayes_optimal_from(a: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<BayesSolution> {
    let root = sym_psd_sqrt(sigma)?;
    let inv_root = linalg::sym_inv_sqrt(sigma)?;
    let m = linalg::symmetrize(&(&root * a.transpose() * a * &root));
    let (values, vectors) = sorted_eigen(&m);
    let n = values.len();
    let lambda = values[n - 1];
    let u = vectors.column(n - 1).into_owned();
    let eigen_residual = (&m * &u - &u * lambda).norm() / (lambda.abs().max(f64::MIN_POSITIVE) * u.norm());
    let degenerate_spectrum = n > 1 && (lambda - values[n - 2]).abs() <= 1e-10 * lambda.abs();
    let m_matrix_condition = if values[0] > 0.0 { lambda / values[0] } else { f64::INFINITY };
    let encoder = Encoder::normalized(&inv_root * u)?.canonical();
    Ok(BayesSolution {
        encoder,
        leading_eigenvalue: lambda,
        m_matrix_condition,
        eigen_residual,
        degenerate_spectrum,
    })
}
