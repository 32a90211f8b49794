use ndarray::{Array1, Array2, Axis};
use rand::RngExt;

use super::{glorot_limit, Adam, Differentiable, EpochLoss, ParamTensor, TrainConfig, TrainedModel, INIT_STREAM};
use crate::error::{Error, Result};
use crate::lingauss::TrajectoryBatch;
use crate::rng;

pub const MLP_HIDDEN: usize = 64;

/// φ(x) = w2 · relu(W1 x + b1) + b2, trained together with a scalar
/// predictor `alpha` so that φ(x_{t+1}) ≈ alpha · φ(x_t).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
    pub alpha: f64,
}

/// States of whole trajectories; transitions are consecutive states within
/// a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpData {
    pub states: Array2<f64>,
    pub traj_len: usize,
}

impl MlpData {
    pub fn from_batch(batch: &TrajectoryBatch) -> Result<Self> {
        if batch.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: batch.dim(),
            });
        }
        if batch.length() < 2 {
            return Err(Error::InvalidArgument("trajectories need at least 2 states".into()));
        }
        let n = batch.count() * batch.length();
        let states = Array2::from_shape_vec((n, 2), batch.data().to_vec())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Self {
            states,
            traj_len: batch.length(),
        })
    }

    pub fn n_transitions(&self) -> usize {
        self.states.nrows() / self.traj_len * (self.traj_len - 1)
    }

    fn transitions(&self) -> impl Iterator<Item = usize> + '_ {
        let l = self.traj_len;
        (0..self.states.nrows()).filter(move |j| j % l != l - 1)
    }
}

impl MlpEncoder {
    /// Glorot-uniform weights, zero biases, alpha = 0.
    pub fn init(seed: u64) -> Self {
        let mut r = rng::stream(seed, INIT_STREAM);
        let l1 = glorot_limit(2, MLP_HIDDEN);
        let l2 = glorot_limit(MLP_HIDDEN, 1);
        let w1 = Array2::from_shape_fn((MLP_HIDDEN, 2), |_| l1 * (2.0 * r.random::<f64>() - 1.0));
        let w2 = Array1::from_shape_fn(MLP_HIDDEN, |_| l2 * (2.0 * r.random::<f64>() - 1.0));
        Self {
            w1,
            b1: Array1::zeros(MLP_HIDDEN),
            w2,
            b2: 0.0,
            alpha: 0.0,
        }
    }

    pub fn preactivations(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w1.t()) + &self.b1
    }

    /// φ at every row of `x` (n × 2).
    pub fn forward(&self, x: &Array2<f64>) -> Array1<f64> {
        let h = self.preactivations(x).mapv(|z| z.max(0.0));
        h.dot(&self.w2) + self.b2
    }

    pub fn encode(&self, s: f64, e: f64) -> f64 {
        let mut out = self.b2;
        for j in 0..MLP_HIDDEN {
            let z = self.w1[(j, 0)] * s + self.w1[(j, 1)] * e + self.b1[j];
            if z > 0.0 {
                out += self.w2[j] * z;
            }
        }
        out
    }

    /// Smallest |pre-activation| over the rows of `x`; finite differences
    /// are unreliable when this is below the perturbation size.
    pub fn min_abs_preactivation(&self, x: &Array2<f64>) -> f64 {
        self.preactivations(x).iter().fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }

    fn residuals(&self, data: &MlpData, phi: &Array1<f64>) -> Vec<(usize, f64)> {
        data.transitions().map(|j| (j, phi[j + 1] - self.alpha * phi[j])).collect()
    }
}

impl Differentiable for MlpEncoder {
    type Data = MlpData;

    fn n_params(&self) -> usize {
        MLP_HIDDEN * 4 + 2
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend(self.w1.iter());
        p.extend(self.b1.iter());
        p.extend(self.w2.iter());
        p.push(self.b2);
        p.push(self.alpha);
        p
    }

    fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let h = MLP_HIDDEN;
        self.w1.iter_mut().zip(&flat[..2 * h]).for_each(|(a, b)| *a = *b);
        self.b1.iter_mut().zip(&flat[2 * h..3 * h]).for_each(|(a, b)| *a = *b);
        self.w2.iter_mut().zip(&flat[3 * h..4 * h]).for_each(|(a, b)| *a = *b);
        self.b2 = flat[4 * h];
        self.alpha = flat[4 * h + 1];
    }

    fn loss(&self, data: &MlpData) -> Result<f64> {
        let phi = self.forward(&data.states);
        let r = self.residuals(data, &phi);
        Ok(r.iter().map(|(_, r)| r * r).sum::<f64>() / r.len() as f64)
    }

    fn loss_and_grad(&self, data: &MlpData) -> Result<(f64, Vec<f64>)> {
        let z = self.preactivations(&data.states);
        let h = z.mapv(|v| v.max(0.0));
        let phi = h.dot(&self.w2) + self.b2;
        let res = self.residuals(data, &phi);
        let n = res.len() as f64;

        let mut loss = 0.0;
        let mut d_alpha = 0.0;
        let mut d_phi = Array1::<f64>::zeros(phi.len());
        for &(j, r) in &res {
            loss += r * r;
            d_phi[j + 1] += 2.0 * r / n;
            d_phi[j] -= 2.0 * self.alpha * r / n;
            d_alpha -= 2.0 * r * phi[j] / n;
        }
        loss /= n;

        let d_w2 = h.t().dot(&d_phi);
        let d_b2 = d_phi.sum();
        // dZ = (dφ ⊗ w2) ⊙ 1[z > 0]; the subgradient at exactly 0 is 0
        let mut d_z = d_phi.view().insert_axis(Axis(1)).dot(&self.w2.view().insert_axis(Axis(0)));
        d_z.zip_mut_with(&z, |d, &zv| {
            if zv <= 0.0 {
                *d = 0.0;
            }
        });
        let d_w1 = d_z.t().dot(&data.states);
        let d_b1 = d_z.sum_axis(Axis(0));

        let mut g = Vec::with_capacity(self.n_params());
        g.extend(d_w1.iter());
        g.extend(d_b1.iter());
        g.extend(d_w2.iter());
        g.push(d_b2);
        g.push(d_alpha);
        Ok((loss, g))
    }

    fn tensors(&self) -> Vec<ParamTensor> {
        vec![
            ParamTensor {
                name: "w1".into(),
                shape: vec![MLP_HIDDEN, 2],
                data: self.w1.iter().copied().collect(),
            },
            ParamTensor {
                name: "b1".into(),
                shape: vec![MLP_HIDDEN],
                data: self.b1.to_vec(),
            },
            ParamTensor {
                name: "w2".into(),
                shape: vec![1, MLP_HIDDEN],
                data: self.w2.to_vec(),
            },
            ParamTensor {
                name: "b2".into(),
                shape: vec![1],
                data: vec![self.b2],
            },
            ParamTensor {
                name: "alpha".into(),
                shape: vec![1],
                data: vec![self.alpha],
            },
        ]
    }

    fn kind(&self) -> &'static str {
        "mlp_encoder"
    }
}

/// Full-batch Adam on the latent self-prediction loss, keeping the
/// parameters with the lowest validation loss.
pub fn train_mlp_encoder(batch: &TrajectoryBatch, cfg: &TrainConfig) -> Result<TrainedModel<MlpEncoder>> {
    cfg.validate()?;
    if batch.count() < 2 {
        return Err(Error::InvalidArgument("need at least 2 trajectories to split".into()));
    }
    let (train, val) = batch.split(cfg.split_fraction);
    let train = MlpData::from_batch(&train)?;
    let val = MlpData::from_batch(&val)?;

    let mut model = MlpEncoder::init(cfg.seed);
    let mut params = model.params();
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut initial = f64::NAN;

    for epoch in 1..=cfg.epochs {
        let (train_loss, grad) = model.loss_and_grad(&train)?;
        if !train_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergedLoss { epoch });
        }
        if epoch == 1 {
            initial = train_loss;
        }
        opt.step(&mut params, &grad);
        model.set_params(&params);
        let val_loss = model.loss(&val)?;
        if !val_loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        trace.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
        }
    }
    model.set_params(&best.2);
    Ok(TrainedModel {
        params: model,
        best_validation_loss: best.0,
        best_epoch: best.1,
        initial_train_loss: initial,
        loss_trace: trace,
        seed: cfg.seed,
        config: cfg.clone(),
    })
}
