//! Independent reference computations for the integration tests.
//!
//! Nothing here calls into the library under test except for plain data
//! types; each oracle is a brute-force enumeration, a direct simulation or
//! a closed form derived by hand.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Monte-Carlo estimate of the stationary covariance of
/// `x_{t+1} = A x_t + diag(√q) ξ_t` from one long chain, with batch-means
/// standard errors. Returns `(estimate, standard error)` entrywise.
pub fn mc_covariance(
    a: &DMatrix<f64>,
    q_diag: &[f64],
    burn_in: usize,
    steps: usize,
    batches: usize,
    seed: u64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let sd: Vec<f64> = q_diag.iter().map(|q| q.sqrt()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = DVector::<f64>::zeros(n);
    let mut step = |x: &mut DVector<f64>| {
        let noise = DVector::from_fn(n, |i, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd[i] * z
        });
        *x = a * &*x + noise;
    };
    for _ in 0..burn_in {
        step(&mut x);
    }
    let per = steps / batches;
    let mut means = Vec::with_capacity(batches);
    for _ in 0..batches {
        let mut acc = DMatrix::<f64>::zeros(n, n);
        for _ in 0..per {
            step(&mut x);
            acc += &x * x.transpose();
        }
        means.push(acc / per as f64);
    }
    let b = batches as f64;
    let est = means.iter().fold(DMatrix::zeros(n, n), |s, m| s + m) / b;
    let var = means
        .iter()
        .fold(DMatrix::zeros(n, n), |s: DMatrix<f64>, m| s + (m - &est).map(|d| d * d))
        / (b - 1.0);
    let se = var.map(|v| (v / b).sqrt());
    (est, se)
}

/// Sample covariance of independent draws (rows of `samples`) about zero,
/// with the entrywise standard error of the mean of `x_i x_j`.
pub fn iid_covariance(samples: &[Vec<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = samples[0].len();
    let m = samples.len() as f64;
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut sq = DMatrix::<f64>::zeros(n, n);
    for x in samples {
        for i in 0..n {
            for j in 0..n {
                let p = x[i] * x[j];
                sum[(i, j)] += p;
                sq[(i, j)] += p * p;
            }
        }
    }
    let mean = &sum / m;
    let se = DMatrix::from_fn(n, n, |i, j| ((sq[(i, j)] / m - mean[(i, j)].powi(2)) / (m - 1.0)).sqrt());
    (mean, se)
}

/// Exact binomial coefficient.
pub fn choose(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// Two-sided Fisher p-value by enumerating every table with the margins of
/// `[[a, b], [c, d]]` in exact integer arithmetic: the total probability of
/// tables no more likely than the observed one.
pub fn fisher_enumeration(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let weight = |x: u64| choose(r1, x) * choose(r2, c1 - x);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let observed = weight(a);
    let total: u128 = (lo..=hi).map(weight).sum();
    let tail: u128 = (lo..=hi).map(weight).filter(|&w| w <= observed).sum();
    tail as f64 / total as f64
}

/// Mann-Whitney U of `x` by pairwise comparison, ties counting one half.
pub fn u_pairwise(x: &[f64], y: &[f64]) -> f64 {
    let mut u = 0.0;
    for a in x {
        for b in y {
            if a > b {
                u += 1.0;
            } else if a == b {
                u += 0.5;
            }
        }
    }
    u
}

/// Two-sided permutation p-value of U: over every way of choosing which
/// `|x|` of the pooled values form the first sample, the fraction whose U
/// is at least as far from `nm/2` as the observed one.
pub fn mw_permutation(x: &[f64], y: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let total = pooled.len();
    assert!(total <= 20, "enumeration oracle is for small samples");
    let n = x.len();
    let center = (n * y.len()) as f64 / 2.0;
    let observed = u_pairwise(x, y);
    let dev = (observed - center).abs();
    let (mut hit, mut all) = (0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (i, v) in pooled.iter().enumerate() {
            if mask & (1 << i) != 0 {
                xs.push(*v);
            } else {
                ys.push(*v);
            }
        }
        all += 1;
        if (u_pairwise(&xs, &ys) - center).abs() >= dev - 1e-9 {
            hit += 1;
        }
    }
    (observed, hit as f64 / all as f64)
}

/// Score statistic `(p̂ − p) / √(p(1−p)/n)` of a binomial proportion.
pub fn wilson_score(successes: u64, n: u64, p: f64) -> f64 {
    let p_hat = successes as f64 / n as f64;
    (p_hat - p) / (p * (1.0 - p) / n as f64).sqrt()
}

/// Latent self-prediction risk of unit `w` straight from its definition:
/// Var(wᵀx') − Cov(wᵀx', wᵀx)² / Var(wᵀx) with x' = Ax + noise.
pub fn latent_risk_direct(a: &DMatrix<f64>, sigma: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    let v = w.dot(&(sigma * w));
    let q = sigma - a * sigma * a.transpose();
    let next_var = w.dot(&((a * sigma * a.transpose() + q) * w));
    let cross = w.dot(&(a * sigma * w));
    next_var - cross * cross / v
}

/// Argmin over `n` equally spaced angles in [0, π) of `f`, returning
/// `(θ, f(θ))`.
pub fn angular_brute_force(f: impl Fn(f64) -> f64, n: usize) -> (f64, f64) {
    (0..n)
        .map(|k| {
            let t = std::f64::consts::PI * k as f64 / n as f64;
            (t, f(t))
        })
        .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Closed-form 2D stationary covariance by solving the three linear
/// equations of Σ = AΣAᵀ + Q for A = [[a_s, c], [0, a_e]], Q = diag(q_s, q_e).
pub fn covariance_2d_by_hand(a_s: f64, c: f64, a_e: f64, q_s: f64, q_e: f64) -> [f64; 3] {
    let s22 = q_e / (1.0 - a_e * a_e);
    let s12 = c * a_e * s22 / (1.0 - a_s * a_e);
    let s11 = (2.0 * a_s * c * s12 + c * c * s22 + q_s) / (1.0 - a_s * a_s);
    [s11, s12, s22]
}

/// Stationary variance of `e' = e + (−α e + σ ξ) Δt`.
pub fn euler_ou_variance(alpha: f64, sigma: f64, dt: f64) -> f64 {
    let phi = 1.0 - alpha * dt;
    (sigma * dt).powi(2) / (1.0 - phi * phi)
}

/// Mean over steps `1..length` of E[x_t x_tᵀ] for the linear Euler map of a
/// Duffing system with β_s = 0, starting from N(0, sd₀² I).
pub fn linear_duffing_second_moments(
    alpha_s: f64,
    gamma: f64,
    sigma_s: f64,
    alpha_e: f64,
    sigma_e: f64,
    dt: f64,
    start_sd: f64,
    length: usize,
) -> DMatrix<f64> {
    let f = DMatrix::from_row_slice(2, 2, &[1.0 - alpha_s * dt, gamma * dt, 0.0, 1.0 - alpha_e * dt]);
    let g = DMatrix::from_diagonal(&DVector::from_vec(vec![(sigma_s * dt).powi(2), (sigma_e * dt).powi(2)]));
    let mut p = DMatrix::identity(2, 2) * start_sd * start_sd;
    let mut acc = DMatrix::zeros(2, 2);
    for _ in 1..length {
        p = &f * &p * f.transpose() + &g;
        acc += &p;
    }
    acc / (length - 1) as f64
}
