//! MLP encoder and GRU predictor trained from scratch with hand-written
//! gradients.
//!
//! Both models expose their parameters as one flat vector through
//! [`Differentiable`], which is what [`Adam`] and [`gradient_check`] work on.

mod adam;
mod fidelity;
mod gru;
mod mlp;

use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use adam::Adam;
pub use fidelity::{finite_diff_fidelity, sample_stationary_points, FidelityResult, ScalarEncoder};
pub use gru::{train_gru, GruMode, GruPredictor, WindowSet, GRU_HIDDEN, GRU_INPUT};
pub use mlp::{train_mlp_encoder, MlpData, MlpEncoder, MLP_HIDDEN};

/// RNG stream used for parameter initialization.
pub const INIT_STREAM: u64 = 1;
/// RNG stream used for mini-batch shuffling.
pub const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub window_length: usize,
    /// Fraction of trajectories used for training; the rest validate.
    pub split_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.window_length < 2 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be positive and window_length at least 2".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }

    /// Settings for the latent self-prediction MLP: full batch, lr 1e-3.
    pub fn mlp(epochs: usize, seed: u64) -> Self {
        Self {
            learning_rate: 1e-3,
            epochs,
            batch_size: usize::MAX,
            window_length: 2,
            split_fraction: 0.8,
            seed,
        }
    }

    /// Settings for the GRU: lr 1e-3, batches of 64 windows of length 20.
    pub fn gru(epochs: usize, seed: u64) -> Self {
        Self {
            learning_rate: 1e-3,
            epochs,
            batch_size: 64,
            window_length: 20,
            split_fraction: 0.8,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Named parameter block with its shape, for JSON dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// A model with a flat parameter vector and an analytic loss gradient.
pub trait Differentiable {
    type Data: ?Sized;

    fn n_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, flat: &[f64]);
    fn loss(&self, data: &Self::Data) -> Result<f64>;
    fn loss_and_grad(&self, data: &Self::Data) -> Result<(f64, Vec<f64>)>;
    fn tensors(&self) -> Vec<ParamTensor>;
    fn kind(&self) -> &'static str;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<P> {
    pub params: P,
    pub best_validation_loss: f64,
    /// 1-based epoch whose parameters were retained.
    pub best_epoch: usize,
    /// Training loss at initialization.
    pub initial_train_loss: f64,
    pub loss_trace: Vec<EpochLoss>,
    pub seed: u64,
    pub config: TrainConfig,
}

impl<P: Differentiable> TrainedModel<P> {
    /// Parameter dump with shapes and the training configuration.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.params.kind(),
            "n_params": self.params.n_params(),
            "tensors": self.params.tensors(),
            "best_validation_loss": self.best_validation_loss,
            "best_epoch": self.best_epoch,
            "seed": self.seed,
            "config": self.config,
        })
    }
}

impl<P> TrainedModel<P> {
    pub fn loss_trace_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.loss_trace {
            let _ = writeln!(out, "{},{:.17e},{:.17e}", e.epoch, e.train_loss, e.val_loss);
        }
        out
    }
}

/// Coordinates compared by [`gradient_check`] when a model has more
/// parameters than this.
pub const GRADIENT_CHECK_SUBSET: usize = 128;

/// Largest relative difference between the analytic gradient and central
/// finite differences with step `eps`, per coordinate
/// `|a − f| / max(|a|, |f|, 1e-3·‖g‖∞)`.
///
/// Every coordinate is compared for models with at most
/// [`GRADIENT_CHECK_SUBSET`] parameters, otherwise a seeded random subset
/// of that size.
pub fn gradient_check<M: Differentiable + Clone>(model: &M, data: &M::Data, eps: f64) -> Result<f64> {
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside [1e-8, 1e-4]")));
    }
    let (_, grad) = model.loss_and_grad(data)?;
    let base = model.params();
    let n = base.len();
    let coords: Vec<usize> = if n <= GRADIENT_CHECK_SUBSET {
        (0..n).collect()
    } else {
        let mut r = rng::stream(n as u64, 0);
        let mut idx = sample(&mut r, n, GRADIENT_CHECK_SUBSET).into_vec();
        idx.sort_unstable();
        idx
    };
    let g_inf = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = 1e-3 * g_inf;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in coords {
        let mut p = base.clone();
        p[i] = base[i] + eps;
        probe.set_params(&p);
        let plus = probe.loss(data)?;
        p[i] = base[i] - eps;
        probe.set_params(&p);
        let minus = probe.loss(data)?;
        let fd = (plus - minus) / (2.0 * eps);
        let denom = grad[i].abs().max(fd.abs()).max(floor);
        if denom > 0.0 {
            worst = worst.max((grad[i] - fd).abs() / denom);
        }
    }
    Ok(worst)
}

/// Uniform Glorot limit √(6 / (fan_in + fan_out)).
pub(crate) fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
