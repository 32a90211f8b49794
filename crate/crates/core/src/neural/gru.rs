use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::seq::SliceRandom;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::{
    glorot_limit, Adam, Differentiable, EpochLoss, ParamTensor, TrainConfig, TrainedModel, INIT_STREAM, SHUFFLE_STREAM,
};
use crate::error::{Error, Result};
use crate::lingauss::TrajectoryBatch;
use crate::rng;

pub const GRU_HIDDEN: usize = 32;
pub const GRU_INPUT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GruMode {
    /// Predict only the next system coordinate.
    Grounded,
    /// Predict the next full state (s, e).
    Unconstrained,
}

impl GruMode {
    pub fn output_dim(self) -> usize {
        match self {
            GruMode::Grounded => 1,
            GruMode::Unconstrained => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GruMode::Grounded => "grounded",
            GruMode::Unconstrained => "unconstrained",
        }
    }
}

/// Single-layer GRU with a linear readout.
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// y  = V h' + c
/// ```
///
/// The reset gate multiplies the hidden state before `U_n` is applied.
/// `w`, `u` and `b` stack the z, r and n blocks in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct GruPredictor {
    pub mode: GruMode,
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
    pub v: Array2<f64>,
    pub c: Array1<f64>,
}

/// Stride-1 windows of consecutive states, `n_windows × length × 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub windows: Array3<f64>,
}

impl WindowSet {
    pub fn from_batch(batch: &TrajectoryBatch, length: usize) -> Result<Self> {
        if batch.dim() != GRU_INPUT {
            return Err(Error::DimensionMismatch {
                expected: GRU_INPUT,
                got: batch.dim(),
            });
        }
        if length < 2 || batch.length() < length {
            return Err(Error::InvalidArgument(format!(
                "trajectories of length {} cannot hold a window of {length}",
                batch.length()
            )));
        }
        let per = batch.length() - length + 1;
        let mut windows = Array3::zeros((batch.count() * per, length, GRU_INPUT));
        for (i, traj) in batch.trajectories().enumerate() {
            for k in 0..per {
                let mut w = windows.index_axis_mut(Axis(0), i * per + k);
                for t in 0..length {
                    for d in 0..GRU_INPUT {
                        w[(t, d)] = traj[(k + t) * GRU_INPUT + d];
                    }
                }
            }
        }
        Ok(Self { windows })
    }

    /// Whole trajectories as single windows.
    pub fn whole(batch: &TrajectoryBatch) -> Result<Self> {
        Self::from_batch(batch, batch.length())
    }

    pub fn len(&self) -> usize {
        self.windows.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            windows: self.windows.select(Axis(0), idx),
        }
    }
}

struct Cache {
    /// h_0 … h_T
    hs: Vec<Array2<f64>>,
    zs: Vec<Array2<f64>>,
    rs: Vec<Array2<f64>>,
    ns: Vec<Array2<f64>>,
    rhs: Vec<Array2<f64>>,
    ys: Vec<Array2<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GruPredictor {
    /// Glorot-uniform weights per gate block, zero biases.
    pub fn init(hidden: usize, mode: GruMode, seed: u64) -> Self {
        let mut r = rng::stream(seed, INIT_STREAM);
        let mut uniform = |limit: f64| limit * (2.0 * r.random::<f64>() - 1.0);
        let lw = glorot_limit(GRU_INPUT, hidden);
        let lu = glorot_limit(hidden, hidden);
        let out = mode.output_dim();
        let lv = glorot_limit(hidden, out);
        let w = Array2::from_shape_fn((3 * hidden, GRU_INPUT), |_| uniform(lw));
        let u = Array2::from_shape_fn((3 * hidden, hidden), |_| uniform(lu));
        let v = Array2::from_shape_fn((out, hidden), |_| uniform(lv));
        Self {
            mode,
            w,
            u,
            b: Array1::zeros(3 * hidden),
            v,
            c: Array1::zeros(out),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.v.nrows()
    }

    fn step(&self, x: ArrayView2<f64>, h: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
        let hd = self.hidden();
        let gx = x.dot(&self.w.t()) + &self.b;
        let gh = h.dot(&self.u.slice(s![..2 * hd, ..]).t());
        let mut z = &gx.slice(s![.., ..hd]) + &gh.slice(s![.., ..hd]);
        z.mapv_inplace(sigmoid);
        let mut r = &gx.slice(s![.., hd..2 * hd]) + &gh.slice(s![.., hd..]);
        r.mapv_inplace(sigmoid);
        let rh = &r * h;
        let mut n = rh.dot(&self.u.slice(s![2 * hd.., ..]).t()) + gx.slice(s![.., 2 * hd..]);
        n.mapv_inplace(f64::tanh);
        let mut h_next = Array2::zeros(h.raw_dim());
        Zip::from(&mut h_next).and(&z).and(&n).and(h).for_each(|o, &z, &n, &h| *o = (1.0 - z) * n + z * h);
        (h_next, z, r, n, rh)
    }

    /// Run over the first `steps` inputs of every window, from h = 0.
    fn forward(&self, x: ArrayView3<f64>, steps: usize) -> Result<Cache> {
        let batch = x.len_of(Axis(0));
        let mut cache = Cache {
            hs: vec![Array2::zeros((batch, self.hidden()))],
            zs: Vec::with_capacity(steps),
            rs: Vec::with_capacity(steps),
            ns: Vec::with_capacity(steps),
            rhs: Vec::with_capacity(steps),
            ys: Vec::with_capacity(steps),
        };
        for t in 0..steps {
            let (h, z, r, n, rh) = self.step(x.slice(s![.., t, ..]), &cache.hs[t]);
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::HiddenStateOverflow);
            }
            cache.ys.push(h.dot(&self.v.t()) + &self.c);
            cache.hs.push(h);
            cache.zs.push(z);
            cache.rs.push(r);
            cache.ns.push(n);
            cache.rhs.push(rh);
        }
        Ok(cache)
    }

    fn targets<'a>(&self, x: &'a ArrayView3<f64>, t: usize) -> ArrayView2<'a, f64> {
        x.slice_move(s![.., t + 1, ..self.output_dim()])
    }

    fn loss_of(&self, x: ArrayView3<f64>) -> Result<f64> {
        let steps = x.len_of(Axis(1)) - 1;
        let cache = self.forward(x, steps)?;
        let mut sum = 0.0;
        for t in 0..steps {
            Zip::from(&cache.ys[t]).and(&self.targets(&x, t)).for_each(|&y, &g| sum += (y - g) * (y - g));
        }
        Ok(sum / (x.len_of(Axis(0)) * steps * self.output_dim()) as f64)
    }

    /// Final hidden state after consuming every state of each trajectory.
    pub fn final_hidden(&self, batch: &TrajectoryBatch) -> Result<Array2<f64>> {
        let set = WindowSet::whole(batch)?;
        let steps = batch.length();
        let mut cache = self.forward(set.windows.view(), steps)?;
        Ok(cache.hs.pop().expect("at least one state"))
    }

    /// Per-trajectory mean squared next-step error over whole trajectories,
    /// on the targets of this model's mode.
    pub fn trajectory_mse(&self, batch: &TrajectoryBatch) -> Result<Vec<f64>> {
        let set = WindowSet::whole(batch)?;
        let x = set.windows.view();
        let steps = batch.length() - 1;
        let cache = self.forward(x, steps)?;
        let mut per = vec![0.0; batch.count()];
        for t in 0..steps {
            let diff = &cache.ys[t] - &self.targets(&x, t);
            for (i, row) in diff.outer_iter().enumerate() {
                per[i] += row.iter().map(|d| d * d).sum::<f64>();
            }
        }
        let denom = (steps * self.output_dim()) as f64;
        Ok(per.into_iter().map(|s| s / denom).collect())
    }

    fn grad_of(&self, x: ArrayView3<f64>) -> Result<(f64, Vec<f64>)> {
        let hd = self.hidden();
        let bsz = x.len_of(Axis(0));
        let steps = x.len_of(Axis(1)) - 1;
        let cache = self.forward(x, steps)?;
        let scale = 2.0 / (bsz * steps * self.output_dim()) as f64;

        let mut dw = Array2::<f64>::zeros(self.w.raw_dim());
        let mut du = Array2::<f64>::zeros(self.u.raw_dim());
        let mut db = Array1::<f64>::zeros(self.b.raw_dim());
        let mut dv = Array2::<f64>::zeros(self.v.raw_dim());
        let mut dc = Array1::<f64>::zeros(self.c.raw_dim());
        let mut dh = Array2::<f64>::zeros((bsz, hd));
        let u_zr = self.u.slice(s![..2 * hd, ..]);
        let u_n = self.u.slice(s![2 * hd.., ..]);
        let mut loss = 0.0;

        for t in (0..steps).rev() {
            let mut dy = &cache.ys[t] - &self.targets(&x, t);
            loss += dy.iter().map(|d| d * d).sum::<f64>();
            dy *= scale;
            dv += &dy.t().dot(&cache.hs[t + 1]);
            dc += &dy.sum_axis(Axis(0));
            dh += &dy.dot(&self.v);

            let (h, z, r, n, rh) = (&cache.hs[t], &cache.zs[t], &cache.rs[t], &cache.ns[t], &cache.rhs[t]);
            let mut dan = Array2::zeros((bsz, hd));
            Zip::from(&mut dan).and(&dh).and(z).and(n).for_each(|o, &g, &z, &n| *o = g * (1.0 - z) * (1.0 - n * n));
            let mut daz = Array2::zeros((bsz, hd));
            Zip::from(&mut daz).and(&dh).and(h).and(n).and(z).for_each(|o, &g, &h, &n, &z| *o = g * (h - n) * z * (1.0 - z));
            let d_rh = dan.dot(&u_n);
            let mut dar = Array2::zeros((bsz, hd));
            Zip::from(&mut dar).and(&d_rh).and(h).and(r).for_each(|o, &g, &h, &r| *o = g * h * r * (1.0 - r));

            let da_zr = concatenate![Axis(1), daz, dar];
            let da = concatenate![Axis(1), da_zr, dan];
            dw += &da.t().dot(&x.slice(s![.., t, ..]));
            db += &da.sum_axis(Axis(0));
            du.slice_mut(s![..2 * hd, ..]).scaled_add(1.0, &da_zr.t().dot(h));
            du.slice_mut(s![2 * hd.., ..]).scaled_add(1.0, &dan.t().dot(rh));

            let mut dh_prev = da_zr.dot(&u_zr);
            Zip::from(&mut dh_prev)
                .and(&dh)
                .and(z)
                .and(&d_rh)
                .and(r)
                .for_each(|o, &g, &z, &grh, &r| *o += g * z + grh * r);
            dh = dh_prev;
        }
        loss /= (bsz * steps * self.output_dim()) as f64;

        let mut g = Vec::with_capacity(self.n_params());
        for a in [dw.view(), du.view()] {
            g.extend(a.iter());
        }
        g.extend(db.iter());
        g.extend(dv.iter());
        g.extend(dc.iter());
        Ok((loss, g))
    }
}

impl Differentiable for GruPredictor {
    type Data = WindowSet;

    fn n_params(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len() + self.v.len() + self.c.len()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend(self.w.iter());
        p.extend(self.u.iter());
        p.extend(self.b.iter());
        p.extend(self.v.iter());
        p.extend(self.c.iter());
        p
    }

    fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut it = flat.iter();
        for x in self
            .w
            .iter_mut()
            .chain(self.u.iter_mut())
            .chain(self.b.iter_mut())
            .chain(self.v.iter_mut())
            .chain(self.c.iter_mut())
        {
            *x = *it.next().expect("length checked");
        }
    }

    fn loss(&self, data: &WindowSet) -> Result<f64> {
        self.loss_of(data.windows.view())
    }

    fn loss_and_grad(&self, data: &WindowSet) -> Result<(f64, Vec<f64>)> {
        self.grad_of(data.windows.view())
    }

    fn tensors(&self) -> Vec<ParamTensor> {
        let t = |name: &str, shape: &[usize], data: Vec<f64>| ParamTensor {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        };
        vec![
            t("w_zrn", self.w.shape(), self.w.iter().copied().collect()),
            t("u_zrn", self.u.shape(), self.u.iter().copied().collect()),
            t("b_zrn", self.b.shape(), self.b.to_vec()),
            t("readout_w", self.v.shape(), self.v.iter().copied().collect()),
            t("readout_b", self.c.shape(), self.c.to_vec()),
        ]
    }

    fn kind(&self) -> &'static str {
        match self.mode {
            GruMode::Grounded => "gru_grounded",
            GruMode::Unconstrained => "gru_unconstrained",
        }
    }
}

/// Mini-batch Adam with backpropagation through time on stride-1 windows,
/// keeping the parameters with the lowest validation loss.
pub fn train_gru(batch: &TrajectoryBatch, mode: GruMode, cfg: &TrainConfig) -> Result<TrainedModel<GruPredictor>> {
    train_gru_sized(batch, mode, cfg, GRU_HIDDEN)
}

pub(crate) fn train_gru_sized(
    batch: &TrajectoryBatch,
    mode: GruMode,
    cfg: &TrainConfig,
    hidden: usize,
) -> Result<TrainedModel<GruPredictor>> {
    cfg.validate()?;
    if batch.count() < 2 {
        return Err(Error::InvalidArgument("need at least 2 trajectories to split".into()));
    }
    let (train, val) = batch.split(cfg.split_fraction);
    let train = WindowSet::from_batch(&train, cfg.window_length)?;
    let val = WindowSet::from_batch(&val, cfg.window_length)?;

    let mut model = GruPredictor::init(hidden, mode, cfg.seed);
    let mut params = model.params();
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    let mut shuffle = rng::stream(cfg.seed, SHUFFLE_STREAM);
    let initial = model.loss(&train)?;
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let sub = train.select(chunk);
            let (l, g) = model.loss_and_grad(&sub)?;
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::DivergedLoss { epoch });
            }
            total += l * chunk.len() as f64;
            opt.step(&mut params, &g);
            model.set_params(&params);
        }
        let val_loss = model.loss(&val)?;
        if !val_loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        trace.push(EpochLoss {
            epoch,
            train_loss: total / train.len() as f64,
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
