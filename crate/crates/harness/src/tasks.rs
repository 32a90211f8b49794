//! Configuration enumeration and the per-task pipelines of each tier.

use std::collections::BTreeMap;

use pcgap::duffing::{duffing_task, DuffingTaskSettings};
use pcgap::encoder_opt::bayes_optimal;
use pcgap::error::Result as CoreResult;
use pcgap::gap_analysis::{
    compression_direction_deg, find_bifurcation, highdim_task_with, ib_sweep, measure_robustness, verify_counterexample,
    ParamPoint,
};
use pcgap::lingauss::{sample_trajectories, solve_covariance, DynamicsSpec};
use pcgap::neural::{finite_diff_fidelity, sample_stationary_points, train_mlp_encoder, TrainConfig};
use pcgap::risk::{self, acute_angle_deg, angular_profile, Encoder, Objective, DEFAULT_ANGULAR_POINTS};
use pcgap::rng::stream_id;

use crate::config::{SweepConfig, Tier};
use crate::error::{HarnessError, Result};
use crate::records::Columns;

pub type Params = BTreeMap<String, f64>;
pub type Metrics = BTreeMap<String, f64>;

fn params(entries: &[(&str, f64)]) -> Params {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn point_params(p: &ParamPoint) -> Params {
    params(&[("a_s", p.a_s), ("c", p.c), ("a_e", p.a_e), ("q_s", p.q_s), ("q_e", p.q_e)])
}

fn point_of(p: &Params) -> ParamPoint {
    ParamPoint::new(p["a_s"], p["c"], p["a_e"], p["q_s"], p["q_e"])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    /// Size of the Cartesian product before filtering and subsetting.
    pub nominal: usize,
    /// Configurations passing the stability filter, before subsetting.
    pub stable: usize,
    pub configs: Vec<Params>,
}

/// `|c| < 1 − max(|a_s|, |a_e|)`, the filter of the NN sweep grid.
pub fn nn_stability_filter(a_s: f64, a_e: f64, c: f64) -> bool {
    c.abs() < 1.0 - a_s.abs().max(a_e.abs())
}

/// `m` indices spread evenly over `0..n`: `⌊k·n/m⌋` for `k < m`.
pub fn stratified_indices(n: usize, m: usize) -> Vec<usize> {
    if m == 0 || m >= n {
        return (0..n).collect();
    }
    (0..m).map(|k| k * n / m).collect()
}

fn eta_points(cfg: &SweepConfig) -> Result<Vec<ParamPoint>> {
    Ok(cfg
        .grid("eta")?
        .chunks(5)
        .map(|c| ParamPoint::from_array([c[0], c[1], c[2], c[3], c[4]]))
        .collect())
}

fn linear_grid_points(cfg: &SweepConfig) -> Result<Vec<ParamPoint>> {
    let mut out = Vec::new();
    let (q_s, q_e) = (cfg.grid("q_s")?, cfg.grid("q_e")?);
    let mut push = |a_s: f64, c: f64, a_e: f64| {
        for &qs in q_s {
            for &qe in q_e {
                out.push(ParamPoint::new(a_s, c, a_e, qs, qe));
            }
        }
    };
    for &a_s in cfg.grid("diag_a_s")? {
        for &a_e in cfg.grid("diag_a_e")? {
            push(a_s, 0.0, a_e);
        }
    }
    for &c in cfg.grid("coupled_c")? {
        for &a_s in cfg.grid("coupled_a_s")? {
            for &a_e in cfg.grid("coupled_a_e")? {
                push(a_s, c, a_e);
            }
        }
    }
    Ok(out)
}

/// All configurations of a tier in lexicographic axis order.
pub fn enumerate_configs(cfg: &SweepConfig) -> Result<Enumeration> {
    let mut nominal = None;
    let mut stable = None;
    let configs: Vec<Params> = match cfg.tier {
        Tier::Verify => eta_points(cfg)?.iter().map(point_params).collect(),
        Tier::LinearGrid => linear_grid_points(cfg)?.iter().map(point_params).collect(),
        Tier::Ib => {
            let mut pts = eta_points(cfg)?;
            pts.extend(linear_grid_points(cfg)?);
            let betas = cfg.grid("beta")?;
            pts.iter()
                .flat_map(|p| {
                    betas.iter().map(move |&b| {
                        let mut m = point_params(p);
                        m.insert("beta".into(), b);
                        m
                    })
                })
                .collect()
        }
        Tier::Bifurcation => {
            let r = cfg.grid("c_range")?;
            eta_points(cfg)?
                .iter()
                .map(|p| {
                    let mut m = point_params(p);
                    m.insert("c_lo".into(), r[0]);
                    m.insert("c_hi".into(), r[1]);
                    m
                })
                .collect()
        }
        Tier::NnSweep => {
            let q_e = cfg.setting("q_e")?;
            let mut all = Vec::new();
            let mut n = 0;
            for &a_s in cfg.grid("a_s")? {
                for &a_e in cfg.grid("a_e")? {
                    for &c in cfg.grid("c")? {
                        for &eps in cfg.grid("epsilon")? {
                            n += 1;
                            if nn_stability_filter(a_s, a_e, c) {
                                all.push(params(&[
                                    ("a_s", a_s),
                                    ("a_e", a_e),
                                    ("c", c),
                                    ("epsilon", eps),
                                    ("q_s", eps * q_e),
                                    ("q_e", q_e),
                                ]));
                            }
                        }
                    }
                }
            }
            nominal = Some(n);
            stable = Some(all.len());
            let keep = stratified_indices(all.len(), cfg.setting_usize("max_configs")?);
            keep.into_iter().map(|i| all[i].clone()).collect()
        }
        Tier::Highdim => {
            let mut out = Vec::new();
            for &n in cfg.grid("n_env")? {
                if n < 1.0 || n.fract() != 0.0 {
                    return Err(HarnessError::InvalidConfig(format!("n_env must be a positive integer, got {n}")));
                }
                for &c in cfg.grid("c")? {
                    for &q_s in cfg.grid("q_s")? {
                        out.push(params(&[("n_env", n), ("c", c), ("q_s", q_s)]));
                    }
                }
            }
            out
        }
        Tier::Duffing => {
            let mut out = Vec::new();
            for &a in cfg.grid("alpha_e")? {
                for &g in cfg.grid("gamma_se")? {
                    for &gr in cfg.grid("grounded")? {
                        out.push(params(&[("alpha_e", a), ("gamma_se", g), ("grounded", gr)]));
                    }
                }
            }
            out
        }
    };
    if configs.is_empty() {
        return Err(HarnessError::EmptyGrid(cfg.tier.to_string()));
    }
    let mut seen = std::collections::HashSet::new();
    let configs: Vec<Params> = configs
        .into_iter()
        .filter(|p| seen.insert(crate::records::task_key(cfg.tier, p, 0)))
        .collect();
    Ok(Enumeration {
        nominal: nominal.unwrap_or(configs.len()),
        stable: stable.unwrap_or(configs.len()),
        configs,
    })
}

/// Seed of a task derived from its identity, independent of scheduling.
pub fn task_seed(seed: u64, p: &Params) -> u64 {
    p.values().fold(seed, |acc, v| stream_id(acc, v.to_bits()))
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn put(m: &mut Metrics, entries: &[(&str, f64)]) {
    for (k, v) in entries {
        m.insert(k.to_string(), *v);
    }
}

fn report_metrics(p: &ParamPoint) -> CoreResult<Metrics> {
    let r = verify_counterexample(p)?;
    let mut m = Metrics::new();
    put(
        &mut m,
        &[
            ("s11", r.s11),
            ("s12", r.s12),
            ("s22", r.s22),
            ("r_nz", r.r_nz),
            ("r_env", r.r_env),
            ("r_star", r.r_star),
            ("theta_star_deg", r.theta_star_deg),
            ("fidelity", r.fidelity),
            ("delta", r.delta),
            ("ratio_nz_env", r.ratio_nz_env),
            ("nz_suboptimal", flag(r.nz_suboptimal)),
            ("nz_optimal", flag(r.nz_optimal)),
            ("interior_optimum", flag(r.interior_optimum)),
        ],
    );
    Ok(m)
}

fn verify_task(cfg: &SweepConfig, p: &Params, seed: u64) -> CoreResult<Metrics> {
    let point = point_of(p);
    let mut m = report_metrics(&point)?;
    let spec = point.spec()?;
    let cov = solve_covariance(&spec)?;

    let r_sys_nz = risk::system_risk(&Encoder::nz(2), &spec, &cov)?.value;
    let sys = angular_profile(&spec, &cov, Objective::System, DEFAULT_ANGULAR_POINTS)?;
    let bayes = bayes_optimal(&spec, &cov)?;
    let w = bayes.encoder.w();
    let bayes_risk = risk::latent_risk(&bayes.encoder, &spec, &cov)?.value;
    let radius = cfg.setting("robust_radius").map_err(to_core)?;
    let samples = cfg.setting_usize("robust_samples").map_err(to_core)?;
    let rob = measure_robustness(&point, radius, samples, task_seed(seed, p))?;
    put(
        &mut m,
        &[
            ("r_sys_nz", r_sys_nz),
            ("r_sys_min", sys.refined_value),
            ("theta_sys_line_deg", sys.refined_theta_deg()),
            ("theta_sys_deg", acute_angle_deg(sys.refined_theta)),
            ("sys_ratio", r_sys_nz / sys.refined_value),
            ("bayes_w_s", w[0]),
            ("bayes_w_e", w[1]),
            ("bayes_latent_risk", bayes_risk),
            ("bayes_eigen_residual", bayes.eigen_residual),
            ("compression_deg", compression_direction_deg(&point)?),
            ("robust_fraction", rob.fraction),
            ("robust_positive", rob.positive as f64),
            ("robust_samples", rob.n_samples as f64),
            ("robust_rejected", rob.rejected as f64),
        ],
    );
    Ok(m)
}

fn ib_task(p: &Params) -> CoreResult<Metrics> {
    let point = point_of(p);
    let ib = ib_sweep(&point, &[p["beta"]])?[0];
    let mut m = Metrics::new();
    put(
        &mut m,
        &[
            ("theta_star_deg", ib.theta_star_deg),
            ("nz_distance_deg", ib.nz_distance_deg()),
            ("ib_value", ib.ib_value),
            ("compression_deg", compression_direction_deg(&point)?),
        ],
    );
    Ok(m)
}

fn bifurcation_task(cfg: &SweepConfig, p: &Params) -> CoreResult<Metrics> {
    let grid = cfg.setting_usize("grid").map_err(to_core)?;
    let b = find_bifurcation(&point_of(p), p["c_lo"], p["c_hi"], grid)?;
    let first = b.theta_star_path.first().map(|x| x.1).unwrap_or(f64::NAN);
    let last = b.theta_star_path.last().map(|x| x.1).unwrap_or(f64::NAN);
    let mut m = Metrics::new();
    put(
        &mut m,
        &[
            ("c_star", b.c_star),
            ("bracket_lo", b.bracket.0),
            ("bracket_hi", b.bracket.1),
            ("bracket_width", b.bracket.1 - b.bracket.0),
            ("d2_at_c_lo", b.second_derivative.first().map(|x| x.1).unwrap_or(f64::NAN)),
            ("d2_at_c_hi", b.second_derivative.last().map(|x| x.1).unwrap_or(f64::NAN)),
            ("theta_at_c_lo_deg", first),
            ("theta_at_c_hi_deg", last),
            ("nz_distance_at_c_hi_deg", acute_angle_deg(last.to_radians())),
        ],
    );
    Ok(m)
}

fn nn_task(cfg: &SweepConfig, p: &Params, seed: u64) -> CoreResult<Metrics> {
    let get = |k: &str| cfg.setting_usize(k).map_err(to_core);
    let spec = DynamicsSpec::new_2d(p["a_s"], p["c"], p["a_e"], p["q_s"], p["q_e"])?;
    let ts = task_seed(seed, p);
    let batch = sample_trajectories(&spec, get("trajectories")?, get("length")?, stream_id(ts, 0))?;
    let train_cfg = TrainConfig {
        learning_rate: cfg.setting("learning_rate").map_err(to_core)?,
        ..TrainConfig::mlp(get("epochs")?, stream_id(ts, 1))
    };
    let model = train_mlp_encoder(&batch, &train_cfg)?;
    let cov = solve_covariance(&spec)?;
    let points = sample_stationary_points(&cov, get("fidelity_points")?, stream_id(ts, 2))?;
    let fid = finite_diff_fidelity(&model.params, &points, cfg.setting("fd_step").map_err(to_core)?)?;
    let lin = angular_profile(&spec, &cov, Objective::Latent, DEFAULT_ANGULAR_POINTS)?;
    let r_nz = risk::latent_risk(&Encoder::nz(2), &spec, &cov)?.value;
    let final_train = model.loss_trace.last().map(|e| e.train_loss).unwrap_or(f64::NAN);
    let nn = model.best_validation_loss;
    let mut m = Metrics::new();
    put(
        &mut m,
        &[
            ("nn_val_risk", nn),
            ("nn_initial_train_loss", model.initial_train_loss),
            ("nn_final_train_loss", final_train),
            ("best_epoch", model.best_epoch as f64),
            ("alpha", model.params.alpha),
            ("lin_risk", lin.refined_value),
            ("lin_theta_deg", lin.refined_theta_deg()),
            ("lin_fidelity", Encoder::from_angle(lin.refined_theta).fidelity()),
            ("r_nz", r_nz),
            ("risk_ratio", nn / lin.refined_value),
            ("nn_beats_linear", flag(nn < lin.refined_value)),
            ("fidelity", fid.fidelity),
            ("fidelity_used", fid.used as f64),
            ("fidelity_excluded", fid.excluded as f64),
        ],
    );
    Ok(m)
}

fn highdim_metrics(cfg: &SweepConfig, p: &Params, seed: u64) -> CoreResult<Metrics> {
    let r = highdim_task_with(
        p["n_env"] as usize,
        cfg.setting("a_s").map_err(to_core)?,
        p["c"],
        p["q_s"],
        cfg.setting("q_e").map_err(to_core)?,
        cfg.setting_usize("restarts").map_err(to_core)?,
        task_seed(seed, p),
    )?;
    let mut m = Metrics::new();
    put(
        &mut m,
        &[
            ("r_nz", r.r_nz),
            ("r_star", r.r_star),
            ("gap", r.gap),
            ("improvement_pct", r.improvement_pct),
            ("fidelity", r.fidelity),
            ("w_s_abs", r.w_s_abs),
            ("converged_fraction", r.converged_fraction),
        ],
    );
    Ok(m)
}

fn duffing_metrics(cfg: &SweepConfig, p: &Params, seed: u64) -> CoreResult<Metrics> {
    let get = |k: &str| cfg.setting_usize(k).map_err(to_core);
    let settings = DuffingTaskSettings {
        train_count: get("train_count")?,
        length: get("length")?,
        epochs: get("epochs")?,
        test_count: get("test_count")?,
        threshold: cfg.setting("threshold").map_err(to_core)?,
    };
    let r = duffing_task(p["alpha_e"], p["gamma_se"], p["grounded"] == 1.0, seed, &settings)?;
    let mut m = Metrics::new();
    put(
        &mut m,
        &[
            ("val_mse", r.val_mse),
            ("max_corr_s", r.max_corr_s),
            ("max_corr_e", r.max_corr_e),
            ("ratio", r.ratio),
            ("env_dominant", flag(r.env_dominant)),
            ("mse_id", r.mse_id),
            ("mse_ood", r.mse_ood),
            ("inflation", r.inflation),
        ],
    );
    Ok(m)
}

fn to_core(e: HarnessError) -> pcgap::error::Error {
    pcgap::error::Error::InvalidArgument(e.to_string())
}

/// Run one (configuration, seed) task of the config's tier.
pub fn run_task(cfg: &SweepConfig, p: &Params, seed: u64) -> CoreResult<Metrics> {
    match cfg.tier {
        Tier::Verify => verify_task(cfg, p, seed),
        Tier::LinearGrid => report_metrics(&point_of(p)),
        Tier::Ib => ib_task(p),
        Tier::Bifurcation => bifurcation_task(cfg, p),
        Tier::NnSweep => nn_task(cfg, p, seed),
        Tier::Highdim => highdim_metrics(cfg, p, seed),
        Tier::Duffing => duffing_metrics(cfg, p, seed),
    }
}

const POINT: &[&str] = &["a_s", "c", "a_e", "q_s", "q_e"];
const REPORT_METRICS: &[&str] = &[
    "s11",
    "s12",
    "s22",
    "r_nz",
    "r_env",
    "r_star",
    "theta_star_deg",
    "fidelity",
    "delta",
    "ratio_nz_env",
    "nz_suboptimal",
    "nz_optimal",
    "interior_optimum",
];
const REPORT_FLAGS: &[&str] = &["nz_suboptimal", "nz_optimal", "interior_optimum"];

/// CSV column layout of a tier.
pub fn columns(tier: Tier) -> Columns {
    match tier {
        Tier::Verify => Columns {
            params: POINT,
            metrics: &[
                "s11",
                "s12",
                "s22",
                "r_nz",
                "r_env",
                "r_star",
                "theta_star_deg",
                "fidelity",
                "delta",
                "ratio_nz_env",
                "nz_suboptimal",
                "nz_optimal",
                "interior_optimum",
                "r_sys_nz",
                "r_sys_min",
                "theta_sys_line_deg",
                "theta_sys_deg",
                "sys_ratio",
                "bayes_w_s",
                "bayes_w_e",
                "bayes_latent_risk",
                "bayes_eigen_residual",
                "compression_deg",
                "robust_fraction",
                "robust_positive",
                "robust_samples",
                "robust_rejected",
            ],
            flags: REPORT_FLAGS,
        },
        Tier::LinearGrid => Columns {
            params: &["a_s", "a_e", "c", "q_s", "q_e"],
            metrics: REPORT_METRICS,
            flags: REPORT_FLAGS,
        },
        Tier::Ib => Columns {
            params: &["a_s", "c", "a_e", "q_s", "q_e", "beta"],
            metrics: &["theta_star_deg", "nz_distance_deg", "ib_value", "compression_deg"],
            flags: &[],
        },
        Tier::Bifurcation => Columns {
            params: &["a_s", "c", "a_e", "q_s", "q_e", "c_lo", "c_hi"],
            metrics: &[
                "c_star",
                "bracket_lo",
                "bracket_hi",
                "bracket_width",
                "d2_at_c_lo",
                "d2_at_c_hi",
                "theta_at_c_lo_deg",
                "theta_at_c_hi_deg",
                "nz_distance_at_c_hi_deg",
            ],
            flags: &[],
        },
        Tier::NnSweep => Columns {
            params: &["a_s", "a_e", "c", "epsilon", "q_s", "q_e"],
            metrics: &[
                "nn_val_risk",
                "nn_initial_train_loss",
                "nn_final_train_loss",
                "best_epoch",
                "alpha",
                "lin_risk",
                "lin_theta_deg",
                "lin_fidelity",
                "r_nz",
                "risk_ratio",
                "nn_beats_linear",
                "fidelity",
                "fidelity_used",
                "fidelity_excluded",
            ],
            flags: &["nn_beats_linear"],
        },
        Tier::Highdim => Columns {
            params: &["n_env", "c", "q_s"],
            metrics: &[
                "r_nz",
                "r_star",
                "gap",
                "improvement_pct",
                "fidelity",
                "w_s_abs",
                "converged_fraction",
            ],
            flags: &[],
        },
        Tier::Duffing => Columns {
            params: &["alpha_e", "gamma_se", "grounded"],
            metrics: &[
                "val_mse",
                "max_corr_s",
                "max_corr_e",
                "ratio",
                "env_dominant",
                "mse_id",
                "mse_ood",
                "inflation",
            ],
            flags: &["env_dominant"],
        },
    }
}
