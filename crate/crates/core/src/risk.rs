//! Predictive risks of a one-dimensional linear encoder `y = wᵀx`.
//!
//! With Σ the stationary covariance and `B = AΣ` (so `Cov(x_{t+1}, x_t) = B`):
//!
//! ```text
//! latent  R(w)     = wᵀΣw − (wᵀBw)² / wᵀΣw          α* = wᵀBw / wᵀΣw
//! system  R_sys(w) = Σ₁₁ − (b₁ᵀw)² / wᵀΣw            α* = b₁ᵀw / wᵀΣw
//! IB      IB(w;β)  = R(w) + β ln(wᵀΣw)
//! ```
//!
//! where `b₁ᵀ` is the first row of `B`. The formulas are evaluated for any
//! nonzero `w`; the encoder types keep `‖w‖ = 1`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lingauss::{CovarianceSolution, DynamicsSpec};

/// Minimum admissible latent variance wᵀΣw.
pub const MIN_VARIANCE: f64 = 1e-14;
/// Grid size used for angular scans unless stated otherwise.
pub const DEFAULT_ANGULAR_POINTS: usize = 4001;
/// Golden-section refinement stops once the bracket is narrower than this.
pub const REFINE_TOL: f64 = 1e-8;

/// Unit-norm linear encoder.
///
/// For 2D encoders built from an angle, `w = (cos θ, sin θ)` with θ ∈ [0, π).
/// Encoders produced by optimizers follow the sign convention of
/// [`linalg::canonical_sign`] instead, so their `w` equals ±(cos θ, sin θ).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    w: DVector<f64>,
    theta: Option<f64>,
}

impl Encoder {
    /// Wrap an already normalized vector (‖w‖ = 1 within 1e-12).
    pub fn new(w: DVector<f64>) -> Result<Self> {
        let norm = w.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("encoder norm is {norm}, expected 1")));
        }
        Ok(Self { w, theta: None })
    }

    pub fn normalized(w: DVector<f64>) -> Result<Self> {
        let norm = w.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument("cannot normalize a zero or non-finite vector".into()));
        }
        Ok(Self { w: w / norm, theta: None })
    }

    pub fn from_angle(theta: f64) -> Self {
        let theta = theta.rem_euclid(PI);
        Self {
            w: DVector::from_vec(vec![theta.cos(), theta.sin()]),
            theta: Some(theta),
        }
    }

    /// The system readout (1, 0, …, 0).
    pub fn nz(dim: usize) -> Self {
        let mut w = DVector::zeros(dim);
        w[0] = 1.0;
        Self {
            w,
            theta: (dim == 2).then_some(0.0),
        }
    }

    /// The 2D environment readout (0, 1).
    pub fn env_2d() -> Self {
        Self::from_angle(PI / 2.0)
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// θ in [0, π) for 2D encoders: the stored angle if built from one,
    /// otherwise the angle of the line spanned by `w`.
    pub fn theta(&self) -> Option<f64> {
        if self.dim() != 2 {
            return None;
        }
        Some(self.theta.unwrap_or_else(|| line_angle(self.w[0], self.w[1])))
    }

    /// Causal fidelity |w_s| / (|w_s| + ‖w_e‖).
    pub fn fidelity(&self) -> f64 {
        let ws = self.w[0].abs();
        let we = self.w.rows(1, self.dim() - 1).norm();
        ws / (ws + we)
    }

    /// Copy with the first nonzero coordinate made positive.
    pub fn canonical(&self) -> Self {
        let mut w = self.w.clone();
        linalg::canonical_sign(&mut w);
        let theta = self.theta.filter(|_| w == self.w);
        Self { w, theta }
    }
}

/// Angle in [0, π) of the line through the origin and (x, y).
pub fn line_angle(x: f64, y: f64) -> f64 {
    let a = y.atan2(x).rem_euclid(PI);
    if a >= PI {
        0.0
    } else {
        a
    }
}

/// Angle in degrees between the line at θ and the system axis, in [0°, 90°].
pub fn acute_angle_deg(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    t.min(PI - t).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum Objective {
    Latent,
    System,
    Ib { beta: f64 },
}

impl Objective {
    pub fn variant(&self) -> RiskVariant {
        match self {
            Objective::Latent => RiskVariant::Latent,
            Objective::System => RiskVariant::System,
            Objective::Ib { .. } => RiskVariant::Ib,
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match self {
            Objective::Ib { beta } => Some(*beta),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskVariant {
    Latent,
    System,
    Ib,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEvaluation {
    pub value: f64,
    pub alpha_star: f64,
    pub variant: RiskVariant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

/// Precomputed quadratic forms for repeated risk and gradient evaluation.
#[derive(Debug, Clone)]
pub struct RiskLandscape {
    sigma: DMatrix<f64>,
    /// B + Bᵀ with B = AΣ
    cross_sym: DMatrix<f64>,
    cross: DMatrix<f64>,
    /// first row of B
    sys_row: DVector<f64>,
}

struct Forms {
    var: f64,
    sigma_w: DVector<f64>,
}

impl RiskLandscape {
    pub fn new(spec: &DynamicsSpec, cov: &CovarianceSolution) -> Result<Self> {
        Self::from_matrices(&spec.a_matrix(), &cov.sigma)
    }

    pub fn from_matrices(a: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        if a.shape() != sigma.shape() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: sigma.nrows(),
            });
        }
        let cross = a * sigma;
        let cross_sym = &cross + cross.transpose();
        let sys_row = cross.row(0).transpose();
        Ok(Self {
            sigma: sigma.clone(),
            cross_sym,
            cross,
            sys_row,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    fn check(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: w.len(),
            });
        }
        Ok(())
    }

    fn forms(&self, w: &DVector<f64>) -> Result<Forms> {
        self.check(w)?;
        let sigma_w = &self.sigma * w;
        let var = w.dot(&sigma_w);
        if !(var >= MIN_VARIANCE) {
            return Err(Error::DegenerateVariance(var));
        }
        Ok(Forms { var, sigma_w })
    }

    /// wᵀΣw
    pub fn variance(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.sigma * w))
    }

    pub fn evaluate(&self, w: &DVector<f64>, objective: Objective) -> Result<RiskEvaluation> {
        let f = self.forms(w)?;
        let (value, alpha_star) = match objective {
            Objective::Latent | Objective::Ib { .. } => {
                let cov1 = w.dot(&(&self.cross * w));
                let alpha = cov1 / f.var;
                let mut value = f.var - cov1 * alpha;
                if let Objective::Ib { beta } = objective {
                    if beta != 0.0 {
                        value += beta * f.var.ln();
                    }
                }
                (value, alpha)
            }
            Objective::System => {
                let cross = self.sys_row.dot(w);
                let alpha = cross / f.var;
                (self.sigma[(0, 0)] - cross * alpha, alpha)
            }
        };
        Ok(RiskEvaluation {
            value,
            alpha_star,
            variant: objective.variant(),
            beta: objective.beta(),
        })
    }

    pub fn value(&self, w: &DVector<f64>, objective: Objective) -> Result<f64> {
        self.evaluate(w, objective).map(|r| r.value)
    }

    /// Objective value and its Euclidean gradient at `w` (not projected).
    pub fn value_and_gradient(&self, w: &DVector<f64>, objective: Objective) -> Result<(f64, DVector<f64>)> {
        let f = self.forms(w)?;
        let grad_var = &f.sigma_w * 2.0;
        match objective {
            Objective::Latent | Objective::Ib { .. } => {
                let cross_w = &self.cross_sym * w;
                let u = 0.5 * w.dot(&cross_w);
                let ratio = u / f.var;
                let mut value = f.var - u * ratio;
                // ∇R = ∇v (1 + u²/v²) − 2 (u/v) ∇u, with ∇u = (B + Bᵀ) w
                let mut grad = &grad_var * (1.0 + ratio * ratio) - cross_w * (2.0 * ratio);
                if let Objective::Ib { beta } = objective {
                    if beta != 0.0 {
                        value += beta * f.var.ln();
                        grad += &grad_var * (beta / f.var);
                    }
                }
                Ok((value, grad))
            }
            Objective::System => {
                let p = self.sys_row.dot(w);
                let value = self.sigma[(0, 0)] - p * p / f.var;
                let grad = &grad_var * (p * p / (f.var * f.var)) - &self.sys_row * (2.0 * p / f.var);
                Ok((value, grad))
            }
        }
    }

    /// Risk of the 2D encoder at angle θ (any real θ; the value is π-periodic).
    pub fn at_angle(&self, theta: f64, objective: Objective) -> Result<f64> {
        let w = DVector::from_vec(vec![theta.cos(), theta.sin()]);
        self.value(&w, objective)
    }
}

fn checked_landscape(enc: &Encoder, spec: &DynamicsSpec, cov: &CovarianceSolution) -> Result<RiskLandscape> {
    if enc.dim() != spec.dim() || cov.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: enc.dim(),
        });
    }
    RiskLandscape::new(spec, cov)
}

/// Latent self-prediction risk of `enc`.
pub fn latent_risk(enc: &Encoder, spec: &DynamicsSpec, cov: &CovarianceSolution) -> Result<RiskEvaluation> {
    checked_landscape(enc, spec, cov)?.evaluate(enc.w(), Objective::Latent)
}

/// Risk of predicting `s_{t+1}` from the latent `wᵀx_t`.
pub fn system_risk(enc: &Encoder, spec: &DynamicsSpec, cov: &CovarianceSolution) -> Result<RiskEvaluation> {
    checked_landscape(enc, spec, cov)?.evaluate(enc.w(), Objective::System)
}

/// Latent risk plus the compression penalty β ln Var(y).
pub fn ib_objective(enc: &Encoder, spec: &DynamicsSpec, cov: &CovarianceSolution, beta: f64) -> Result<RiskEvaluation> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {beta}")));
    }
    checked_landscape(enc, spec, cov)?.evaluate(enc.w(), Objective::Ib { beta })
}

/// Risk over θ ∈ [0, π) on an even grid, plus a refined minimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    pub thetas: Vec<f64>,
    pub values: Vec<f64>,
    /// Grid point with the smallest value.
    pub argmin_theta: f64,
    pub argmin_value: f64,
    /// Golden-section refinement of the grid minimum, wrapped into [0, π).
    pub refined_theta: f64,
    pub refined_value: f64,
}

impl RiskProfile {
    pub fn refined_theta_deg(&self) -> f64 {
        self.refined_theta.to_degrees()
    }

    /// `theta_rad,risk` CSV preceded by a `#`-comment line carrying the dynamics as JSON.
    pub fn to_csv(&self, spec: &DynamicsSpec) -> String {
        let mut out = String::new();
        let json = serde_json::to_string(spec).unwrap_or_default();
        let _ = writeln!(out, "# spec: {json}");
        out.push_str("theta_rad,risk\n");
        for (t, v) in self.thetas.iter().zip(&self.values) {
            let _ = writeln!(out, "{t:.17e},{v:.17e}");
        }
        out
    }
}

/// Angular risk profile of a 2D spec with `n_points` grid angles `kπ/n`.
pub fn angular_profile(
    spec: &DynamicsSpec,
    cov: &CovarianceSolution,
    objective: Objective,
    n_points: usize,
) -> Result<RiskProfile> {
    if !spec.is_2d() {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: spec.dim(),
        });
    }
    let landscape = RiskLandscape::new(spec, cov)?;
    profile_of(&landscape, objective, n_points)
}

pub(crate) fn profile_of(landscape: &RiskLandscape, objective: Objective, n_points: usize) -> Result<RiskProfile> {
    if n_points < 3 {
        return Err(Error::InvalidArgument("angular profile needs at least 3 points".into()));
    }
    let step = PI / n_points as f64;
    let thetas: Vec<f64> = (0..n_points).map(|k| k as f64 * step).collect();
    let values = thetas
        .iter()
        .map(|&t| landscape.at_angle(t, objective))
        .collect::<Result<Vec<f64>>>()?;
    let (imin, &vmin) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("n_points >= 3");
    let tmin = thetas[imin];

    let f = |t: f64| landscape.at_angle(t, objective).unwrap_or(f64::INFINITY);
    let (t_ref, v_ref) = golden_section(f, tmin - step, tmin + step, REFINE_TOL);
    // keep the grid point unless refinement improves on it beyond round-off
    let (refined_theta, refined_value) = if v_ref < vmin - 1e-15 * (1.0 + vmin.abs()) {
        (t_ref.rem_euclid(PI), v_ref)
    } else {
        (tmin, vmin)
    };
    Ok(RiskProfile {
        thetas,
        values,
        argmin_theta: tmin,
        argmin_value: vmin,
        refined_theta: if refined_theta >= PI { 0.0 } else { refined_theta },
        refined_value,
    })
}

/// Golden-section search for a minimum of `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}
