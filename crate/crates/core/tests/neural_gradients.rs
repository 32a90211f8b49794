use pcgap::lingauss::{sample_trajectories, DynamicsSpec};
use pcgap::neural::{
    gradient_check, train_gru, train_mlp_encoder, Differentiable, GruMode, GruPredictor, MlpData, MlpEncoder,
    TrainConfig, WindowSet, GRU_HIDDEN,
};
use pcgap::rng;
use rand::RngExt;

fn spec() -> DynamicsSpec {
    DynamicsSpec::new_2d(0.3, -0.5, 0.9, 0.05, 0.1).unwrap()
}

#[test]
fn fresh_mlp_gradient_on_eight_points() {
    let model = MlpEncoder::init(3);
    let mut seed = 0;
    // skip draws that sit within round-off of a ReLU kink
    let data = loop {
        let d = MlpData::from_batch(&sample_trajectories(&spec(), 4, 2, seed).unwrap()).unwrap();
        if model.min_abs_preactivation(&d.states) > 1e-6 {
            break d;
        }
        seed += 1;
    };
    assert_eq!(data.states.nrows(), 8);
    let err = gradient_check(&model, &data, 1e-6).unwrap();
    assert!(err < 1e-4, "{err}");
}

/// Central-difference directional derivatives along `k` random unit
/// directions against the analytic gradient.
fn directional_error<M: Differentiable + Clone>(model: &M, data: &M::Data, k: usize, eps: f64, seed: u64) -> f64 {
    let (_, g) = model.loss_and_grad(data).unwrap();
    let base = model.params();
    let mut r = rng::stream(seed, 0);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for _ in 0..k {
        let mut d: Vec<f64> = (0..base.len()).map(|_| r.random::<f64>() - 0.5).collect();
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        d.iter_mut().for_each(|x| *x /= norm);
        let shifted = |sign: f64| -> Vec<f64> { base.iter().zip(&d).map(|(p, v)| p + sign * eps * v).collect() };
        probe.set_params(&shifted(1.0));
        let plus = probe.loss(data).unwrap();
        probe.set_params(&shifted(-1.0));
        let minus = probe.loss(data).unwrap();
        let fd = (plus - minus) / (2.0 * eps);
        let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()));
    }
    worst
}

#[test]
fn gru_bptt_three_steps_four_units() {
    for mode in [GruMode::Grounded, GruMode::Unconstrained] {
        let mut m = GruPredictor::init(4, mode, 5);
        let mut r = rng::stream(5, 7);
        let p: Vec<f64> = m.params().iter().map(|v| v + 0.2 * (r.random::<f64>() - 0.5)).collect();
        m.set_params(&p);
        let batch = sample_trajectories(&spec(), 3, 4, 2).unwrap();
        let data = WindowSet::from_batch(&batch, 4).unwrap();
        assert_eq!(data.windows.shape()[1], 4);
        let err = directional_error(&m, &data, 6, 1e-6, 11);
        assert!(err < 1e-4, "{mode:?}: {err}");
        let coord = gradient_check(&m, &data, 1e-6).unwrap();
        assert!(coord < 1e-4, "{mode:?}: {coord}");
    }
}

#[test]
fn full_size_gru_directional_gradient() {
    let m = GruPredictor::init(GRU_HIDDEN, GruMode::Unconstrained, 1);
    let batch = sample_trajectories(&spec(), 2, 20, 3).unwrap();
    let data = WindowSet::from_batch(&batch, 20).unwrap();
    let err = directional_error(&m, &data, 6, 1e-6, 12);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn training_retains_the_best_validation_epoch() {
    let batch = sample_trajectories(&spec(), 50, 20, 9).unwrap();
    let mlp = train_mlp_encoder(&batch, &TrainConfig::mlp(30, 4)).unwrap();
    let best = mlp.loss_trace.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(mlp.best_validation_loss, best);
    assert_eq!(mlp.loss_trace[mlp.best_epoch - 1].val_loss, best);

    let mut cfg = TrainConfig::gru(4, 4);
    cfg.window_length = 10;
    let gru = train_gru(&batch, GruMode::Grounded, &cfg).unwrap();
    let best = gru.loss_trace.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(gru.best_validation_loss, best);
    let again = train_gru(&batch, GruMode::Grounded, &cfg).unwrap();
    assert_eq!(gru.params.params(), again.params.params());
}
