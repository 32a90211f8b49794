//! The NZ-suboptimality gap and the checks built on it: counterexample
//! verification, robustness sampling, the boundary bifurcation in `c`,
//! IB sweeps, the deterministic 160-configuration grid and the
//! high-dimensional block family.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder_opt::{self, EncoderSolution};
use crate::error::{Error, Result};
use crate::linalg::sorted_eigen;
use crate::lingauss::{self, solve_covariance, solve_covariance_closed_form, DynamicsSpec};
use crate::risk::{self, acute_angle_deg, line_angle, Encoder, Objective, RiskLandscape, DEFAULT_ANGULAR_POINTS};
use crate::rng;

/// A point η = (a_s, c, a_e, q_s, q_e) of the 2D family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub a_s: f64,
    pub c: f64,
    pub a_e: f64,
    pub q_s: f64,
    pub q_e: f64,
}

/// η₀ = (0.05, −0.90, 0.98, 0.05, 0.10)
pub const ETA0: ParamPoint = ParamPoint {
    a_s: 0.05,
    c: -0.90,
    a_e: 0.98,
    q_s: 0.05,
    q_e: 0.10,
};

impl ParamPoint {
    pub fn new(a_s: f64, c: f64, a_e: f64, q_s: f64, q_e: f64) -> Self {
        Self { a_s, c, a_e, q_s, q_e }
    }

    pub fn from_array(eta: [f64; 5]) -> Self {
        Self::new(eta[0], eta[1], eta[2], eta[3], eta[4])
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.a_s, self.c, self.a_e, self.q_s, self.q_e]
    }

    /// |a_s| < 1, |a_e| < 1, q_s > 0, q_e > 0 and every entry finite.
    pub fn in_domain(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
            && self.a_s.abs() < 1.0
            && self.a_e.abs() < 1.0
            && self.q_s > 0.0
            && self.q_e > 0.0
    }

    pub fn spec(&self) -> Result<DynamicsSpec> {
        DynamicsSpec::new_2d(self.a_s, self.c, self.a_e, self.q_s, self.q_e)
    }

    pub fn with_c(&self, c: f64) -> Self {
        Self { c, ..*self }
    }
}

/// Δ(η) = Σ11² − (a_s Σ11 + c Σ12)² − q_e Σ11.
///
/// Positive exactly when the NZ encoder has larger latent risk than the
/// environment encoder.
pub fn delta_gap(p: &ParamPoint) -> Result<f64> {
    let spec = p.spec()?;
    let cov = solve_covariance_closed_form(&spec)?;
    let (s11, s12) = (cov.s11(), cov.s12());
    let delta = s11 * s11 - (p.a_s * s11 + p.c * s12).powi(2) - p.q_e * s11;
    #[cfg(debug_assertions)]
    {
        let r_nz = risk::latent_risk(&Encoder::nz(2), &spec, &cov)?.value;
        let r_env = risk::latent_risk(&Encoder::env_2d(), &spec, &cov)?.value;
        // Δ = Σ11 (R_NZ − R_env)
        debug_assert!((delta - s11 * (r_nz - r_env)).abs() <= 1e-9 * (1.0 + s11 * s11));
    }
    Ok(delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub point: ParamPoint,
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
    pub r_nz: f64,
    pub r_env: f64,
    pub r_star: f64,
    /// Latent-risk minimizer as a line angle in [0°, 180°).
    pub theta_star_deg: f64,
    /// |cos θ*|
    pub fidelity: f64,
    pub delta: f64,
    pub ratio_nz_env: f64,
    pub nz_suboptimal: bool,
    pub nz_optimal: bool,
    pub interior_optimum: bool,
}

pub fn verify_counterexample(p: &ParamPoint) -> Result<VerificationReport> {
    let spec = p.spec()?;
    let cov = solve_covariance_closed_form(&spec)?;
    let land = RiskLandscape::new(&spec, &cov)?;
    let r_nz = land.at_angle(0.0, Objective::Latent)?;
    let r_env = land.at_angle(PI / 2.0, Objective::Latent)?;
    let profile = risk::angular_profile(&spec, &cov, Objective::Latent, DEFAULT_ANGULAR_POINTS)?;
    let (s11, s12) = (cov.s11(), cov.s12());
    let delta = s11 * s11 - (p.a_s * s11 + p.c * s12).powi(2) - p.q_e * s11;
    let theta = profile.refined_theta;
    let nz_optimal = theta == 0.0;
    let tol = 1e-12 * (1.0 + r_nz.abs().max(r_env.abs()));
    let on_axis = acute_angle_deg(theta) < 1e-9 || (90.0 - acute_angle_deg(theta)) < 1e-9;
    Ok(VerificationReport {
        point: *p,
        s11,
        s12,
        s22: cov.s22(),
        r_nz,
        r_env,
        r_star: profile.refined_value,
        theta_star_deg: theta.to_degrees(),
        fidelity: if nz_optimal { 1.0 } else { theta.cos().abs() },
        delta,
        ratio_nz_env: r_nz / r_env,
        nz_suboptimal: delta > 0.0,
        nz_optimal,
        interior_optimum: !on_axis && profile.refined_value < r_nz.min(r_env) - tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub fraction: f64,
    pub positive: usize,
    pub n_samples: usize,
    /// Draws that fell outside the domain and were redrawn.
    pub rejected: usize,
}

/// Fraction of uniform samples from the L∞ ball of `radius` around `center`
/// with Δ > 0. Draws outside the domain are redrawn and counted.
pub fn measure_robustness(center: &ParamPoint, radius: f64, n_samples: usize, seed: u64) -> Result<RobustnessResult> {
    if !(radius > 0.0) || n_samples == 0 {
        return Err(Error::InvalidArgument("radius must be positive and n_samples at least 1".into()));
    }
    let base = center.to_array();
    let outcomes = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let mut rejected = 0usize;
            loop {
                let mut eta = base;
                for x in eta.iter_mut() {
                    *x += radius * (2.0 * r.random::<f64>() - 1.0);
                }
                let p = ParamPoint::from_array(eta);
                if p.in_domain() {
                    return delta_gap(&p).map(|d| (d > 0.0, rejected));
                }
                rejected += 1;
                if rejected > 10_000 {
                    return Err(Error::InvalidArgument(format!(
                        "ball of radius {radius} is almost entirely outside the domain"
                    )));
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let positive = outcomes.iter().filter(|o| o.0).count();
    Ok(RobustnessResult {
        fraction: positive as f64 / n_samples as f64,
        positive,
        n_samples,
        rejected: outcomes.iter().map(|o| o.1).sum(),
    })
}

pub const SECOND_DERIVATIVE_STEP: f64 = 1e-5;
pub const BIFURCATION_BRACKET: f64 = 1e-8;

/// d²R/dθ² at θ = 0 by central differences on the latent risk.
pub fn second_derivative_at_zero(p: &ParamPoint) -> Result<f64> {
    let spec = p.spec()?;
    let cov = solve_covariance_closed_form(&spec)?;
    let land = RiskLandscape::new(&spec, &cov)?;
    let h = SECOND_DERIVATIVE_STEP;
    let r = |t: f64| land.at_angle(t, Objective::Latent);
    Ok((r(h)? - 2.0 * r(0.0)? + r(-h)?) / (h * h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationResult {
    pub c_star: f64,
    pub bracket: (f64, f64),
    /// `(c, d²R/dθ²|θ=0)` on the grid.
    pub second_derivative: Vec<(f64, f64)>,
    /// `(c, θ* in degrees)` on the grid.
    pub theta_star_path: Vec<(f64, f64)>,
}

/// Locate the first sign change of d²R/dθ²|θ=0 on an even `grid` over
/// `[c_lo, c_hi]`, then bisect it below [`BIFURCATION_BRACKET`]. The `c`
/// field of `base` is ignored.
pub fn find_bifurcation(base: &ParamPoint, c_lo: f64, c_hi: f64, grid: usize) -> Result<BifurcationResult> {
    if grid < 16 || !(c_lo < c_hi) {
        return Err(Error::InvalidArgument("need c_lo < c_hi and at least 16 grid points".into()));
    }
    let cs: Vec<f64> = (0..grid)
        .map(|k| c_lo + (c_hi - c_lo) * k as f64 / (grid - 1) as f64)
        .collect();
    let d2 = |c: f64| second_derivative_at_zero(&base.with_c(c));
    let second_derivative = cs.iter().map(|&c| d2(c).map(|v| (c, v))).collect::<Result<Vec<_>>>()?;
    let theta_star_path = cs
        .par_iter()
        .map(|&c| verify_counterexample(&base.with_c(c)).map(|r| (c, r.theta_star_deg)))
        .collect::<Result<Vec<_>>>()?;

    let change = second_derivative
        .windows(2)
        .position(|w| w[0].1 == 0.0 || w[0].1.signum() != w[1].1.signum())
        .ok_or(Error::NoSignChange { c_lo, c_hi })?;
    let (mut lo, mut f_lo) = second_derivative[change];
    let (mut hi, _) = second_derivative[change + 1];
    if f_lo == 0.0 {
        hi = lo;
    }
    while hi - lo >= BIFURCATION_BRACKET {
        let mid = 0.5 * (lo + hi);
        let f_mid = d2(mid)?;
        if f_mid == 0.0 {
            lo = mid;
            hi = mid;
        } else if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(BifurcationResult {
        c_star: 0.5 * (lo + hi),
        bracket: (lo, hi),
        second_derivative,
        theta_star_path,
    })
}

/// β grid of the IB sweep.
pub const IB_BETAS: [f64; 7] = [1e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbPoint {
    pub beta: f64,
    /// Minimizer as a line angle in [0°, 180°).
    pub theta_star_deg: f64,
    pub ib_value: f64,
    /// β = 0, where the objective reduces to the latent risk.
    pub singular: bool,
}

impl IbPoint {
    /// Angle between the minimizing line and the system axis, in degrees.
    pub fn nz_distance_deg(&self) -> f64 {
        acute_angle_deg(self.theta_star_deg.to_radians())
    }
}

pub fn ib_sweep(p: &ParamPoint, betas: &[f64]) -> Result<Vec<IbPoint>> {
    let spec = p.spec()?;
    let cov = solve_covariance_closed_form(&spec)?;
    betas
        .iter()
        .map(|&beta| {
            if !(beta >= 0.0) {
                return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {beta}")));
            }
            let prof = risk::angular_profile(&spec, &cov, Objective::Ib { beta }, DEFAULT_ANGULAR_POINTS)?;
            Ok(IbPoint {
                beta,
                theta_star_deg: prof.refined_theta_deg(),
                ib_value: prof.refined_value,
                singular: beta == 0.0,
            })
        })
        .collect()
}

/// Line angle in degrees of the smallest-variance direction of Σ, the
/// minimizer of wᵀΣw over unit `w`.
pub fn compression_direction_deg(p: &ParamPoint) -> Result<f64> {
    let cov = solve_covariance_closed_form(&p.spec()?)?;
    let (_, vectors) = sorted_eigen(&cov.sigma);
    Ok(line_angle(vectors[(0, 0)], vectors[(1, 0)]).to_degrees())
}

pub const GRID_Q_S: f64 = 0.05;
pub const GRID_Q_E: f64 = 0.10;
pub const GRID_DIAG_A_S: [f64; 5] = [0.05, 0.3, 0.5, 0.7, 0.9];
pub const GRID_DIAG_A_E: [f64; 8] = [0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99];
pub const GRID_COUPLED_A_S: [f64; 4] = [0.05, 0.3, 0.5, 0.9];
pub const GRID_COUPLED_A_E: [f64; 5] = [0.3, 0.7, 0.9, 0.95, 0.98];
pub const GRID_C_NEG: [f64; 3] = [-0.9, -0.6, -0.3];
pub const GRID_C_POS: [f64; 3] = [0.3, 0.6, 0.9];

/// The 160 configurations: 40 diagonal (c = 0), then 60 with negative and
/// 60 with positive coupling, each block ordered lexicographically.
pub fn deterministic_grid() -> Vec<ParamPoint> {
    let mut out = Vec::with_capacity(160);
    for &a_s in &GRID_DIAG_A_S {
        for &a_e in &GRID_DIAG_A_E {
            out.push(ParamPoint::new(a_s, 0.0, a_e, GRID_Q_S, GRID_Q_E));
        }
    }
    for block in [GRID_C_NEG, GRID_C_POS] {
        for &c in &block {
            for &a_s in &GRID_COUPLED_A_S {
                for &a_e in &GRID_COUPLED_A_E {
                    out.push(ParamPoint::new(a_s, c, a_e, GRID_Q_S, GRID_Q_E));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub n_configs: usize,
    pub n_nz_optimal: usize,
    pub frac_suboptimal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSweepResult {
    pub reports: Vec<VerificationReport>,
    pub summary: GridSummary,
}

pub const GRID_CSV_HEADER: &str = "a_s,a_e,c,q_s,q_e,r_nz,r_env,r_star,theta_star_deg,fidelity,nz_optimal";

impl GridSweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(GRID_CSV_HEADER);
        out.push('\n');
        for r in &self.reports {
            let p = r.point;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.12},{:.12},{:.12},{:.9},{:.12},{}",
                p.a_s, p.a_e, p.c, p.q_s, p.q_e, r.r_nz, r.r_env, r.r_star, r.theta_star_deg, r.fidelity, r.nz_optimal
            );
        }
        out
    }
}

pub fn grid_sweep(points: &[ParamPoint]) -> Result<GridSweepResult> {
    let reports = points.par_iter().map(verify_counterexample).collect::<Result<Vec<_>>>()?;
    let n = reports.len();
    let n_nz_optimal = reports.iter().filter(|r| r.nz_optimal).count();
    Ok(GridSweepResult {
        summary: GridSummary {
            n_configs: n,
            n_nz_optimal,
            frac_suboptimal: if n == 0 { 0.0 } else { (n - n_nz_optimal) as f64 / n as f64 },
        },
        reports,
    })
}

pub fn linear_grid_sweep() -> Result<GridSweepResult> {
    grid_sweep(&deterministic_grid())
}

/// Parameters of the high-dimensional block family.
pub const HIGHDIM_A_S: f64 = 0.05;
pub const HIGHDIM_Q_E: f64 = 0.10;
pub const HIGHDIM_C: [f64; 6] = [-0.95, -0.50, -0.10, 0.10, 0.50, 0.95];
pub const HIGHDIM_Q_S: [f64; 2] = [0.01, 0.05];

/// `(c, q_s)` pairs of the high-dimensional family, c-major.
pub fn highdim_configs() -> Vec<(f64, f64)> {
    HIGHDIM_C
        .iter()
        .flat_map(|&c| HIGHDIM_Q_S.iter().map(move |&q_s| (c, q_s)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighdimRecord {
    pub n_env: usize,
    pub c: f64,
    pub q_s: f64,
    pub r_nz: f64,
    pub r_star: f64,
    pub gap: f64,
    /// 100 · gap / R_NZ
    pub improvement_pct: f64,
    pub fidelity: f64,
    pub w_s_abs: f64,
    pub converged_fraction: f64,
}

/// Optimize one configuration of the high-dimensional family.
pub fn highdim_task(n_env: usize, c: f64, q_s: f64, restarts: usize, seed: u64) -> Result<HighdimRecord> {
    highdim_task_with(n_env, HIGHDIM_A_S, c, q_s, HIGHDIM_Q_E, restarts, seed)
}

/// As [`highdim_task`] with explicit `a_s` and `q_e`.
pub fn highdim_task_with(
    n_env: usize,
    a_s: f64,
    c: f64,
    q_s: f64,
    q_e: f64,
    restarts: usize,
    seed: u64,
) -> Result<HighdimRecord> {
    let spec = lingauss::build_highdim_spec(n_env, a_s, q_s, c, q_e)?;
    let cov = solve_covariance(&spec)?;
    let r_nz = risk::latent_risk(&Encoder::nz(spec.dim()), &spec, &cov)?.value;
    let sol: EncoderSolution = encoder_opt::minimize_sphere(&spec, &cov, Objective::Latent, restarts, seed)?;
    let gap = r_nz - sol.risk.value;
    Ok(HighdimRecord {
        n_env,
        c,
        q_s,
        r_nz,
        r_star: sol.risk.value,
        gap,
        improvement_pct: 100.0 * gap / r_nz,
        fidelity: sol.fidelity,
        w_s_abs: sol.encoder.w()[0].abs(),
        converged_fraction: sol.converged_fraction,
    })
}
