//! Duffing oscillator driven by a hidden Ornstein-Uhlenbeck environment,
//! and the metrics of the recurrent experiment.
//!
//! The Euler map is used exactly as written, with noise scaled by Δt:
//!
//! ```text
//! s' = s + (−α_s s − β_s s³ + γ e + σ_s ξ_s) Δt
//! e' = e + (−α_e e + σ_e ξ_e) Δt
//! ```

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lingauss::{StepSemantics, TrajectoryBatch};
use crate::neural::{train_gru, GruMode, GruPredictor, TrainConfig};
use crate::rng;

pub const BLOWUP_LIMIT: f64 = 1e6;
pub const INITIAL_SD: f64 = 0.1;
pub const DEFAULT_THRESHOLD: f64 = 1.0;
pub const ROBUST_THRESHOLD: f64 = 1.05;

pub const SWEEP_ALPHA_E: [f64; 4] = [0.01, 0.03, 0.1, 0.3];
pub const SWEEP_GAMMA_SE: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuffingParams {
    pub alpha_s: f64,
    pub beta_s: f64,
    pub gamma_se: f64,
    pub sigma_s: f64,
    pub alpha_e: f64,
    pub sigma_e: f64,
    pub dt: f64,
}

impl DuffingParams {
    /// α_s = 0.5, β_s = 1, σ_s = 0.3, σ_e = 0.2, Δt = 0.05.
    pub fn new(alpha_e: f64, gamma_se: f64) -> Self {
        Self {
            alpha_s: 0.5,
            beta_s: 1.0,
            gamma_se,
            sigma_s: 0.3,
            alpha_e,
            sigma_e: 0.2,
            dt: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha_s, self.beta_s, self.gamma_se, self.sigma_s, self.alpha_e, self.sigma_e, self.dt]
            .iter()
            .all(|x| x.is_finite());
        if !finite || !(self.dt > 0.0) || !(self.alpha_e > 0.0) || self.sigma_s < 0.0 || self.sigma_e < 0.0 {
            return Err(Error::InvalidArgument(format!("invalid Duffing parameters {self:?}")));
        }
        Ok(())
    }

    pub fn shifted(&self, shift: OodShift) -> Self {
        Self {
            alpha_e: self.alpha_e * shift.alpha_e_factor,
            sigma_e: self.sigma_e * shift.sigma_e_factor,
            ..*self
        }
    }

    /// Stationary variance σ_e² Δt / (2α_e − α_e² Δt) of the environment
    /// under the Euler map.
    pub fn env_stationary_variance(&self) -> f64 {
        self.sigma_e * self.sigma_e * self.dt / (2.0 * self.alpha_e - self.alpha_e * self.alpha_e * self.dt)
    }

    fn step(&self, s: f64, e: f64, xi_s: f64, xi_e: f64) -> (f64, f64) {
        let ds = -self.alpha_s * s - self.beta_s * s * s * s + self.gamma_se * e + self.sigma_s * xi_s;
        let de = -self.alpha_e * e + self.sigma_e * xi_e;
        (s + ds * self.dt, e + de * self.dt)
    }
}

/// `count` trajectories of `length` states `(s, e)`, starting from
/// independent N(0, 0.1²) coordinates. Trajectory `i` uses substream `i`.
pub fn simulate(params: &DuffingParams, count: usize, length: usize, seed: u64) -> Result<TrajectoryBatch> {
    simulate_from(params, count, length, seed, None)
}

/// As [`simulate`], optionally with a fixed initial state.
pub fn simulate_from(
    params: &DuffingParams,
    count: usize,
    length: usize,
    seed: u64,
    start: Option<(f64, f64)>,
) -> Result<TrajectoryBatch> {
    params.validate()?;
    if count == 0 || length == 0 {
        return Err(Error::InvalidArgument("count and length must be positive".into()));
    }
    let mut data = Vec::with_capacity(count * length * 2);
    for i in 0..count {
        let mut r = rng::stream(seed, i as u64);
        let (mut s, mut e) = match start {
            Some(p) => p,
            None => (INITIAL_SD * rng::normal(&mut r), INITIAL_SD * rng::normal(&mut r)),
        };
        data.extend_from_slice(&[s, e]);
        for step in 1..length {
            let xi_s = rng::normal(&mut r);
            let xi_e = rng::normal(&mut r);
            (s, e) = params.step(s, e, xi_s, xi_e);
            if !(s.abs() <= BLOWUP_LIMIT && e.abs() <= BLOWUP_LIMIT) {
                return Err(Error::TrajectoryBlowup {
                    step,
                    limit: BLOWUP_LIMIT,
                });
            }
            data.extend_from_slice(&[s, e]);
        }
    }
    TrajectoryBatch::from_data(2, count, length, data, seed, StepSemantics::Euler)
}

/// Models exposing a hidden state after reading a whole trajectory.
pub trait HiddenStateModel {
    /// `count × hidden` matrix of final hidden states.
    fn final_hidden(&self, batch: &TrajectoryBatch) -> Result<Array2<f64>>;
}

impl HiddenStateModel for GruPredictor {
    fn final_hidden(&self, batch: &TrajectoryBatch) -> Result<Array2<f64>> {
        GruPredictor::final_hidden(self, batch)
    }
}

/// Which value of s and e the hidden units are correlated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelateTime {
    #[default]
    Final,
    TimeMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub max_corr_s: f64,
    pub max_corr_e: f64,
    pub ratio: f64,
    pub env_dominant: bool,
    pub threshold: f64,
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub fn env_dominance<M: HiddenStateModel + ?Sized>(model: &M, test: &TrajectoryBatch, threshold: f64) -> Result<DominanceReport> {
    env_dominance_with(model, test, threshold, CorrelateTime::Final)
}

/// Max over hidden units of |r(h_j, e)| against the same for s.
///
/// Hidden units that are constant across trajectories carry no
/// correlation and count as 0. A ratio exactly at the threshold is not
/// dominant.
pub fn env_dominance_with<M: HiddenStateModel + ?Sized>(
    model: &M,
    test: &TrajectoryBatch,
    threshold: f64,
    time: CorrelateTime,
) -> Result<DominanceReport> {
    if test.count() < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 test trajectories, got {}",
            test.count()
        )));
    }
    let hidden = model.final_hidden(test)?;
    if hidden.nrows() != test.count() {
        return Err(Error::DimensionMismatch {
            expected: test.count(),
            got: hidden.nrows(),
        });
    }
    let coord = |d: usize| -> Vec<f64> {
        test.trajectories()
            .map(|tr| match time {
                CorrelateTime::Final => tr[tr.len() - 2 + d],
                CorrelateTime::TimeMean => tr.iter().skip(d).step_by(2).sum::<f64>() / (tr.len() / 2) as f64,
            })
            .collect()
    };
    let s = coord(0);
    let e = coord(1);
    let max_abs_corr = |target: &[f64], name: &str| -> Result<f64> {
        let mut best = 0.0f64;
        for col in hidden.axis_iter(Axis(1)) {
            let h = col.to_vec();
            let h_const = h.iter().all(|v| *v == h[0]);
            match pearson(&h, target) {
                Some(r) => best = best.max(r.abs()),
                None if h_const => {}
                None => return Err(Error::ZeroVariance(format!("{name} is constant across trajectories"))),
            }
        }
        if target.iter().all(|v| *v == target[0]) {
            return Err(Error::ZeroVariance(format!("{name} is constant across trajectories")));
        }
        Ok(best)
    };
    let max_corr_s = max_abs_corr(&s, "s")?;
    let max_corr_e = max_abs_corr(&e, "e")?;
    let ratio = if max_corr_s > 0.0 {
        max_corr_e / max_corr_s
    } else if max_corr_e > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(DominanceReport {
        max_corr_s,
        max_corr_e,
        ratio,
        env_dominant: ratio > threshold,
        threshold,
    })
}

/// Models whose one-step prediction error can be measured per trajectory.
pub trait SequencePredictor {
    fn trajectory_mse(&self, batch: &TrajectoryBatch) -> Result<Vec<f64>>;
}

impl SequencePredictor for GruPredictor {
    fn trajectory_mse(&self, batch: &TrajectoryBatch) -> Result<Vec<f64>> {
        GruPredictor::trajectory_mse(self, batch)
    }
}

/// Predicts 0 for the first `output_dim` coordinates of the next state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPredictor {
    pub output_dim: usize,
}

impl SequencePredictor for ZeroPredictor {
    fn trajectory_mse(&self, batch: &TrajectoryBatch) -> Result<Vec<f64>> {
        let d = batch.dim();
        Ok(batch
            .trajectories()
            .map(|tr| {
                let sq: f64 = tr[d..]
                    .chunks(d)
                    .map(|x| x[..self.output_dim].iter().map(|v| v * v).sum::<f64>())
                    .sum();
                sq / ((batch.length() - 1) * self.output_dim) as f64
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodShift {
    pub alpha_e_factor: f64,
    pub sigma_e_factor: f64,
}

impl OodShift {
    pub const STANDARD: OodShift = OodShift {
        alpha_e_factor: 3.0,
        sigma_e_factor: 2.0,
    };
    pub const IDENTITY: OodShift = OodShift {
        alpha_e_factor: 1.0,
        sigma_e_factor: 1.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub mse_id: f64,
    pub mse_ood: f64,
    pub inflation: f64,
    /// Delta-method standard error of `inflation` from the spread of the
    /// trajectory-level errors.
    pub inflation_se: f64,
    pub shift: OodShift,
}

pub const EVAL_LENGTH: usize = 80;

pub fn ood_inflation<M: SequencePredictor + ?Sized>(model: &M, params: &DuffingParams, count: usize, seed: u64) -> Result<OodReport> {
    ood_inflation_with(model, params, OodShift::STANDARD, count, EVAL_LENGTH, seed)
}

/// Mean trajectory MSE on fresh trajectories from `params.shifted(shift)`
/// over the same on fresh trajectories from `params`. The two sets use
/// independent substreams of `seed`.
pub fn ood_inflation_with<M: SequencePredictor + ?Sized>(
    model: &M,
    params: &DuffingParams,
    shift: OodShift,
    count: usize,
    length: usize,
    seed: u64,
) -> Result<OodReport> {
    if count < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 trajectories, got {count}")));
    }
    let id = simulate(params, count, length, rng::stream_id(seed, 0))?;
    let ood = simulate(&params.shifted(shift), count, length, rng::stream_id(seed, 1))?;
    let a = model.trajectory_mse(&id)?;
    let b = model.trajectory_mse(&ood)?;
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, var / n)
    };
    let (m_id, v_id) = stats(&a);
    let (m_ood, v_ood) = stats(&b);
    let inflation = m_ood / m_id;
    let inflation_se = inflation * (v_ood / (m_ood * m_ood) + v_id / (m_id * m_id)).sqrt();
    Ok(OodReport {
        mse_id: m_id,
        mse_ood: m_ood,
        inflation,
        inflation_se,
        shift,
    })
}

/// Sizes and budgets of one Duffing task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuffingTaskSettings {
    pub train_count: usize,
    pub length: usize,
    pub epochs: usize,
    pub test_count: usize,
    pub threshold: f64,
}

impl Default for DuffingTaskSettings {
    fn default() -> Self {
        Self {
            train_count: 40,
            length: 80,
            epochs: 60,
            test_count: 200,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuffingRecord {
    pub alpha_e: f64,
    pub gamma_se: f64,
    pub grounded: bool,
    pub seed: u64,
    pub val_mse: f64,
    pub max_corr_s: f64,
    pub max_corr_e: f64,
    pub ratio: f64,
    pub env_dominant: bool,
    pub mse_id: f64,
    pub mse_ood: f64,
    pub inflation: f64,
    pub status: String,
}

pub const DUFFING_CSV_HEADER: &str =
    "alpha_e,gamma_se,grounded,seed,val_mse,max_corr_s,max_corr_e,ratio,env_dominant,mse_id,mse_ood,inflation,status";

impl DuffingRecord {
    pub fn failed(alpha_e: f64, gamma_se: f64, grounded: bool, seed: u64, reason: &str) -> Self {
        Self {
            alpha_e,
            gamma_se,
            grounded,
            seed,
            val_mse: f64::NAN,
            max_corr_s: f64::NAN,
            max_corr_e: f64::NAN,
            ratio: f64::NAN,
            env_dominant: false,
            mse_id: f64::NAN,
            mse_ood: f64::NAN,
            inflation: f64::NAN,
            status: format!("failed({reason})"),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{},{:.12e},{:.12e},{:.12e},{}",
            self.alpha_e,
            self.gamma_se,
            self.grounded,
            self.seed,
            self.val_mse,
            self.max_corr_s,
            self.max_corr_e,
            self.ratio,
            self.env_dominant,
            self.mse_id,
            self.mse_ood,
            self.inflation,
            self.status.replace(',', ";")
        );
        s
    }
}

/// Seed of the data shared by both training modes of one grid cell.
pub fn task_data_seed(alpha_e: f64, gamma_se: f64, seed: u64) -> u64 {
    rng::stream_id(rng::stream_id(seed, alpha_e.to_bits()), gamma_se.to_bits())
}

/// Simulate, train a GRU, then measure dominance and OOD inflation.
pub fn duffing_task(
    alpha_e: f64,
    gamma_se: f64,
    grounded: bool,
    seed: u64,
    settings: &DuffingTaskSettings,
) -> Result<DuffingRecord> {
    let wrap = |e: Error| Error::TaskFailed(e.to_string());
    let params = DuffingParams::new(alpha_e, gamma_se);
    let data_seed = task_data_seed(alpha_e, gamma_se, seed);
    let train = simulate(&params, settings.train_count, settings.length, rng::stream_id(data_seed, 0)).map_err(wrap)?;
    let mode = if grounded { GruMode::Grounded } else { GruMode::Unconstrained };
    let cfg = TrainConfig::gru(settings.epochs, rng::stream_id(data_seed, 1));
    let model = train_gru(&train, mode, &cfg).map_err(wrap)?;
    let test = simulate(&params, settings.test_count, settings.length, rng::stream_id(data_seed, 2)).map_err(wrap)?;
    let dom = env_dominance(&model.params, &test, settings.threshold).map_err(wrap)?;
    let ood = ood_inflation_with(
        &model.params,
        &params,
        OodShift::STANDARD,
        settings.test_count,
        settings.length,
        rng::stream_id(data_seed, 3),
    )
    .map_err(wrap)?;
    Ok(DuffingRecord {
        alpha_e,
        gamma_se,
        grounded,
        seed,
        val_mse: model.best_validation_loss,
        max_corr_s: dom.max_corr_s,
        max_corr_e: dom.max_corr_e,
        ratio: dom.ratio,
        env_dominant: dom.env_dominant,
        mse_id: ood.mse_id,
        mse_ood: ood.mse_ood,
        inflation: ood.inflation,
        status: "ok".into(),
    })
}
