//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails. Run in release:
//!
//! ```text
//! cargo test -p pcgap-harness --release --test acceptance
//! ```

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use pcgap::duffing::{ood_inflation_with, simulate, DuffingParams, OodShift, EVAL_LENGTH};
use pcgap::gap_analysis::ETA0;
use pcgap::lingauss::{
    build_highdim_spec, sample_trajectories, solve_covariance, solve_covariance_closed_form, solve_covariance_general,
    DynamicsSpec,
};
use pcgap::neural::{
    gradient_check, train_gru, GruMode, GruPredictor, MlpData, MlpEncoder, TrainConfig, WindowSet, GRU_HIDDEN,
};
use pcgap::stats::{fisher_exact, mann_whitney_u, wilson_ci};
use pcgap::Error;
use pcgap_harness::records::{read_journal, JOURNAL_FILE};
use pcgap_harness::runner::CSV_FILE;
use pcgap_harness::{run_sweep, Scale, SweepConfig, SweepRecord, Tier};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

struct Sweep {
    records: Vec<SweepRecord>,
    summary: Value,
    seconds: f64,
}

fn sweep(mut cfg: SweepConfig, out: &Path) -> Result<Sweep, String> {
    cfg.output_dir = out.to_path_buf();
    cfg.parallelism = jobs();
    let start = Instant::now();
    let outcome = run_sweep(&cfg).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let (_, records) = read_journal(&cfg.tier_dir().join(JOURNAL_FILE)).map_err(|e| e.to_string())?;
    Ok(Sweep {
        records,
        summary: outcome.summary,
        seconds,
    })
}

fn ok_records(s: &Sweep) -> Vec<&SweepRecord> {
    s.records.iter().filter(|r| r.status.is_ok()).collect()
}

fn near(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

/// Collects failed sub-checks with their observed values.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failed.push(what);
        }
    }

    fn finish(self) -> Outcome {
        if self.failed.is_empty() {
            Ok(self.notes.join("; "))
        } else {
            Err(self.failed.join("; "))
        }
    }
}

fn verify_eta0(out: &Path) -> Result<(SweepRecord, f64), String> {
    let s = sweep(SweepConfig::template(Tier::Verify, Scale::Desk), out)?;
    let rec = ok_records(&s).first().map(|r| (*r).clone()).ok_or("verify task failed")?;
    Ok((rec, s.seconds))
}

fn c01_quartet(out: &Path) -> Outcome {
    let (r, secs) = verify_eta0(out)?;
    let m = |k: &str| r.metric(k);
    let mut c = Checks::default();
    for (k, target, tol) in [
        ("s11", 2.312, 1e-3),
        ("s12", -2.342, 1e-3),
        ("s22", 2.525, 1e-3),
        ("r_nz", 0.174, 1e-3),
        ("r_env", 0.100, 1e-3),
        ("r_star", 0.074, 1e-3),
        ("theta_star_deg", 43.7, 0.1),
        ("ratio_nz_env", 1.74, 0.01),
    ] {
        c.check(near(m(k), target, tol), format!("{k}={:.4}", m(k)));
    }
    c.check(secs < 1.0, format!("runtime {secs:.3}s"));
    c.finish()
}

fn c02_system_grounding(out: &Path) -> Outcome {
    let (r, _) = verify_eta0(out)?;
    let m = |k: &str| r.metric(k);
    let mut c = Checks::default();
    c.check(near(m("r_sys_nz"), 0.174, 1e-3), format!("R_sys(NZ)={:.4}", m("r_sys_nz")));
    c.check(near(m("r_sys_min"), 0.050, 1e-3), format!("R_sys min={:.4}", m("r_sys_min")));
    c.check(near(m("theta_sys_deg"), 86.8, 0.2), format!("theta={:.2}deg", m("theta_sys_deg")));
    c.check(near(m("sys_ratio"), 3.5, 0.1), format!("ratio={:.3}", m("sys_ratio")));
    c.finish()
}

fn c03_grid(out: &Path) -> Outcome {
    let s = sweep(SweepConfig::template(Tier::LinearGrid, Scale::Desk), out)?;
    let g = |k: &str| s.summary[k].as_u64().unwrap_or(u64::MAX);
    let mut c = Checks::default();
    c.check(g("n_configs") == 160, format!("{} configs", g("n_configs")));
    c.check(g("n_diagonal") == 40, format!("{} diagonal", g("n_diagonal")));
    c.check(
        g("n_nz_optimal") == 40 && g("n_diagonal_nz_optimal") == 40,
        format!("NZ optimal in {} ({} diagonal)", g("n_nz_optimal"), g("n_diagonal_nz_optimal")),
    );
    c.check(g("n_diagonal_fidelity_one") == 40, format!("{} diagonal with fidelity 1", g("n_diagonal_fidelity_one")));
    c.check(
        g("n_coupled") == 120 && g("n_coupled_fidelity_below_one") == 120,
        format!("{} of {} coupled with fidelity < 1", g("n_coupled_fidelity_below_one"), g("n_coupled")),
    );
    c.check(s.seconds < 10.0, format!("runtime {:.2}s", s.seconds));
    c.finish()
}

fn c04_bayes(out: &Path) -> Outcome {
    let (r, _) = verify_eta0(out)?;
    let m = |k: &str| r.metric(k);
    let mut c = Checks::default();
    c.check(
        m("bayes_w_e").abs() > m("bayes_w_s").abs(),
        format!("w=({:.4}, {:.4})", m("bayes_w_s"), m("bayes_w_e")),
    );
    c.check(m("bayes_latent_risk") < 0.174, format!("latent risk {:.4}", m("bayes_latent_risk")));
    c.check(m("bayes_eigen_residual") < 1e-10, format!("residual {:.1e}", m("bayes_eigen_residual")));
    c.finish()
}

fn c05_highdim(out: &Path) -> Outcome {
    let mut cfg = SweepConfig::template(Tier::Highdim, Scale::Full);
    cfg.settings.insert("restarts".into(), 50.0);
    let s = sweep(cfg, out)?;
    let mut c = Checks::default();
    c.check(s.records.len() == 36 && ok_records(&s).len() == 36, format!("{} of {} ok", ok_records(&s).len(), s.records.len()));
    let rows = s.summary["by_n_env"].as_array().cloned().unwrap_or_default();
    for (n, gap, imp) in [(10.0, 0.601, 85.6), (50.0, 0.852, 89.4), (100.0, 1.169, 92.1)] {
        let Some(row) = rows.iter().find(|r| r["n_env"].as_f64() == Some(n)) else {
            c.check(false, format!("N={n} missing"));
            continue;
        };
        let f = |k: &str| row[k].as_f64().unwrap_or(f64::NAN);
        c.check(row["n_configs"].as_u64() == Some(12), format!("N={n}: {} configs", row["n_configs"]));
        c.check(near(f("mean_gap"), gap, 0.02), format!("N={n}: mean gap {:.4} (target {gap})", f("mean_gap")));
        c.check(f("mean_fidelity") < 1e-6, format!("N={n}: mean fidelity {:.3e}", f("mean_fidelity")));
        c.check(
            near(f("mean_improvement_pct"), imp, 1.0),
            format!("N={n}: improvement {:.2}% (target {imp})", f("mean_improvement_pct")),
        );
    }
    c.check(s.seconds < 300.0, format!("runtime {:.1}s", s.seconds));
    c.finish()
}

fn c06_robustness(out: &Path) -> Outcome {
    let (r, _) = verify_eta0(out)?;
    let mut c = Checks::default();
    c.check(r.metric("robust_samples") == 1000.0, format!("{} samples", r.metric("robust_samples")));
    c.check(r.metric("robust_positive") == 1000.0, format!("{} with positive gap", r.metric("robust_positive")));
    c.finish()
}

fn c07_bifurcation(out: &Path) -> Outcome {
    let s = sweep(SweepConfig::template(Tier::Bifurcation, Scale::Desk), out)?;
    let r = ok_records(&s).first().map(|r| (*r).clone()).ok_or("bifurcation task failed")?;
    let m = |k: &str| r.metric(k);
    let mut c = Checks::default();
    c.check(m("c_star") > -0.9 && m("c_star") < 0.0, format!("c*={:.6}", m("c_star")));
    c.check(
        m("d2_at_c_lo").signum() != m("d2_at_c_hi").signum(),
        format!("d2 {:.2e} / {:.2e}", m("d2_at_c_lo"), m("d2_at_c_hi")),
    );
    c.check(m("bracket_width") < 1e-8, format!("bracket {:.1e}", m("bracket_width")));
    let at = |cc: f64| pcgap::gap_analysis::verify_counterexample(&ETA0.with_c(cc)).map(|v| v.theta_star_deg);
    let t0 = at(0.0).map_err(|e| e.to_string())?;
    let t9 = at(-0.9).map_err(|e| e.to_string())?;
    c.check(pcgap::risk::acute_angle_deg(t0.to_radians()) == 0.0, format!("theta(0)={t0:.4}"));
    c.check(near(t9, 43.7, 0.1), format!("theta(-0.9)={t9:.3}"));
    c.finish()
}

fn c08_ib(out: &Path) -> Outcome {
    let s = sweep(SweepConfig::template(Tier::Ib, Scale::Desk), out)?;
    let mut c = Checks::default();
    let ok = ok_records(&s);
    c.check(ok.len() == s.records.len(), format!("{} of {} ok", ok.len(), s.records.len()));
    let eta = ETA0.to_array();
    let on_eta: Vec<&&SweepRecord> = ok
        .iter()
        .filter(|r| ["a_s", "c", "a_e", "q_s", "q_e"].iter().zip(eta).all(|(k, v)| r.param(k) == v))
        .collect();
    let min_eta = on_eta.iter().map(|r| r.metric("nz_distance_deg")).fold(f64::INFINITY, f64::min);
    c.check(on_eta.len() == 7 && min_eta > 0.5, format!("eta0 min distance {min_eta:.3}deg over {} betas", on_eta.len()));
    let within = s.summary["n_coupled_within_0_1_deg_of_nz"].as_u64().unwrap_or(u64::MAX);
    c.check(
        within == 0,
        format!(
            "{within} of {} coupled configs within 0.1deg (min {:.4}deg)",
            s.summary["n_coupled"],
            s.summary["min_coupled_nz_distance_deg"].as_f64().unwrap_or(f64::NAN)
        ),
    );
    let comp = on_eta.first().map(|r| r.metric("compression_deg")).unwrap_or(f64::NAN);
    c.check(near(comp, 43.7, 0.3), format!("compression {comp:.3}deg"));
    c.finish()
}

fn c09_gradients() -> Outcome {
    let spec = DynamicsSpec::new_2d(0.3, -0.5, 0.9, 0.05, 0.1).map_err(|e| e.to_string())?;
    let mut c = Checks::default();
    let mlp = MlpEncoder::init(3);
    let mut seed = 0;
    let data = loop {
        let batch = sample_trajectories(&spec, 8, 10, seed).map_err(|e| e.to_string())?;
        let d = MlpData::from_batch(&batch).map_err(|e| e.to_string())?;
        if mlp.min_abs_preactivation(&d.states) > 1e-6 {
            break d;
        }
        seed += 1;
    };
    let e = gradient_check(&mlp, &data, 1e-6).map_err(|e| e.to_string())?;
    c.check(e < 1e-4, format!("MLP {e:.2e}"));
    let batch = sample_trajectories(&spec, 4, 20, 3).map_err(|e| e.to_string())?;
    let windows = WindowSet::from_batch(&batch, 20).map_err(|e| e.to_string())?;
    for mode in [GruMode::Grounded, GruMode::Unconstrained] {
        let gru = GruPredictor::init(GRU_HIDDEN, mode, 1);
        let e = gradient_check(&gru, &windows, 1e-6).map_err(|e| e.to_string())?;
        c.check(e < 1e-4, format!("GRU {mode:?} {e:.2e}"));
    }
    c.finish()
}

fn c10_nn_desk(out: &Path) -> Outcome {
    let cfg = SweepConfig::template(Tier::NnSweep, Scale::Desk);
    let a = sweep(cfg.clone(), &out.join("first"))?;
    let b = sweep(cfg.clone(), &out.join("second"))?;
    let mut c = Checks::default();
    let ok = ok_records(&a);
    c.check(a.records.len() == 40 && ok.len() == 40, format!("{} of {} ok", ok.len(), a.records.len()));
    let beats = ok.iter().filter(|r| r.flag("nn_beats_linear")).count();
    c.check(beats * 10 >= ok.len() * 9, format!("NN beats linear in {beats}/{}", ok.len()));
    let fid_ok = ok.iter().all(|r| (0.0..=1.0).contains(&r.metric("fidelity")));
    c.check(fid_ok, "fidelity in [0, 1]");
    let csv = |d: &Path| fs::read(d.join("nn_sweep").join(CSV_FILE)).unwrap_or_default();
    let same_csv = !csv(&out.join("first")).is_empty() && csv(&out.join("first")) == csv(&out.join("second"));
    let same_bits = a.records.len() == b.records.len()
        && a.records.iter().all(|r| {
            b.records.iter().any(|s| {
                s.key() == r.key()
                    && s.metrics.len() == r.metrics.len()
                    && s.metrics.iter().zip(&r.metrics).all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits())
            })
        });
    c.check(same_csv && same_bits, "bit-identical re-run");
    c.check(true, format!("mean fidelity {:.3}", a.summary["fidelity"]["mean"].as_f64().unwrap_or(f64::NAN)));
    c.finish()
}

fn c11_duffing_desk(out: &Path) -> Outcome {
    let s = sweep(SweepConfig::template(Tier::Duffing, Scale::Desk), out)?;
    let mut c = Checks::default();
    let ok = ok_records(&s);
    c.check(s.records.len() == 16 && ok.len() == 16, format!("{} of {} ok", ok.len(), s.records.len()));
    let med = |k: &str| s.summary[k]["inflation"]["median"].as_f64().unwrap_or(f64::NAN);
    let (mu, mg) = (med("unconstrained"), med("grounded"));
    c.check(
        s.summary["median_inflation_unconstrained_exceeds_grounded"] == Value::Bool(true),
        format!("median inflation {mu:.3} vs {mg:.3}"),
    );
    let params = DuffingParams::new(0.1, 1.0);
    let train = simulate(&params, 40, 80, 101).map_err(|e| e.to_string())?;
    let model = train_gru(&train, GruMode::Unconstrained, &TrainConfig::gru(60, 102)).map_err(|e| e.to_string())?;
    let r = ood_inflation_with(&model.params, &params, OodShift::IDENTITY, 200, EVAL_LENGTH, 103)
        .map_err(|e| e.to_string())?;
    c.check(
        (r.inflation - 1.0).abs() <= 3.0 * r.inflation_se,
        format!("identity-shift inflation {:.4} ± {:.4}", r.inflation, r.inflation_se),
    );
    c.finish()
}

fn c12_stats() -> Outcome {
    let mut c = Checks::default();
    let r2 = |x: Option<f64>| (x.unwrap_or(f64::NAN) * 100.0).round() / 100.0;
    let a = wilson_ci(28, 51, 0.95).map_err(|e| e.to_string())?;
    let b = wilson_ci(12, 49, 0.95).map_err(|e| e.to_string())?;
    c.check(
        (r2(a.ci_low), r2(a.ci_high)) == (0.41, 0.68) && (r2(b.ci_low), r2(b.ci_high)) == (0.15, 0.38),
        "Wilson [0.41, 0.68] and [0.15, 0.38]",
    );
    let f = fisher_exact(28, 23, 12, 37).map_err(|e| e.to_string())?;
    let p = f.p_value.unwrap_or(f64::NAN);
    c.check(
        near(f.estimate, 3.75, 0.005) && (p - 2.3e-3).abs() <= 0.05 * 2.3e-3,
        format!("Fisher OR {:.3} p {p:.3e}", f.estimate),
    );

    let mut tables = 0usize;
    let mut worst = 0.0f64;
    let mut bad_degenerate = 0usize;
    for total in 0..=40u64 {
        for a in 0..=total {
            for b in 0..=total - a {
                for cc in 0..=total - a - b {
                    let d = total - a - b - cc;
                    let degenerate = a + b == 0 || cc + d == 0 || a + cc == 0 || b + d == 0;
                    match fisher_exact(a, b, cc, d) {
                        Ok(r) if !degenerate => {
                            let oracle = oracles::fisher_enumeration(a, b, cc, d);
                            worst = worst.max((r.p_value.unwrap_or(f64::NAN) - oracle).abs() / oracle);
                            tables += 1;
                        }
                        Err(Error::DegenerateTable(_)) if degenerate => {}
                        _ => bad_degenerate += 1,
                    }
                }
            }
        }
    }
    c.check(worst <= 1e-9 && bad_degenerate == 0, format!("Fisher enumeration {tables} tables, worst rel {worst:.1e}"));

    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let mut cases = 0usize;
    let mut mismatches = 0usize;
    for total in 2..=12usize {
        for n in 1..total {
            for trial in 0..6 {
                let mut draw = || {
                    if trial % 2 == 0 {
                        rng.random::<f64>()
                    } else {
                        (rng.random::<f64>() * 4.0).floor()
                    }
                };
                let x: Vec<f64> = (0..n).map(|_| draw()).collect();
                let y: Vec<f64> = (0..total - n).map(|_| draw()).collect();
                let res = mann_whitney_u(&x, &y).map_err(|e| e.to_string())?;
                let (u, p) = oracles::mw_permutation(&x, &y);
                if (res.estimate - u).abs() > 1e-12 || (res.p_value.unwrap_or(f64::NAN) - p).abs() > 1e-12 {
                    mismatches += 1;
                }
                cases += 1;
            }
        }
    }
    c.check(mismatches == 0, format!("Mann-Whitney permutations {cases} cases, {mismatches} mismatches"));
    c.finish()
}

fn within_3se(sigma: &DMatrix<f64>, est: &DMatrix<f64>, se: &DMatrix<f64>) -> f64 {
    let n = sigma.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max(((est[(i, j)] - sigma[(i, j)]) / se[(i, j)]).abs());
        }
    }
    worst
}

fn c13_solvers() -> Outcome {
    let mut c = Checks::default();
    let mut r = ChaCha20Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * r.random::<f64>();
        let spec = DynamicsSpec::new_2d(u(-0.95, 0.95), u(-2.0, 2.0), u(-0.95, 0.95), u(0.01, 1.0), u(0.01, 1.0))
            .map_err(|e| e.to_string())?;
        let a = solve_covariance_closed_form(&spec).map_err(|e| e.to_string())?;
        let b = solve_covariance_general(&spec).map_err(|e| e.to_string())?;
        worst = worst.max((&a.sigma - &b.sigma).norm() / (1.0 + a.sigma.norm()));
    }
    c.check(worst < 1e-10, format!("1000 specs, worst rel {worst:.1e}"));

    let specs = [
        (DynamicsSpec::new_2d(0.05, -0.90, 0.98, 0.05, 0.10), 5_000, 11, "eta0"),
        (DynamicsSpec::new_2d(0.5, 0.3, 0.7, 0.2, 0.05), 1_000, 12, "2D positive coupling"),
        (build_highdim_spec(10, 0.05, 0.05, -0.95, 0.10), 5_000, 13, "N=10"),
    ];
    for (spec, burn, seed, label) in specs {
        let spec = spec.map_err(|e| e.to_string())?;
        let cov = solve_covariance(&spec).map_err(|e| e.to_string())?;
        let q: Vec<f64> = spec.q_diagonal().iter().copied().collect();
        let (est, se) = oracles::mc_covariance(&spec.a_matrix(), &q, burn, 1_000_000, 100, seed);
        let z = within_3se(&cov.sigma, &est, &se);
        c.check(z <= 3.0, format!("MC {label} max |z| {z:.2}"));
    }
    c.finish()
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = |name: &str| tmp.path().join(name);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 counterexample quartet", Box::new(|| c01_quartet(&dir("c01")))),
        ("2 system-prediction grounding", Box::new(|| c02_system_grounding(&dir("c02")))),
        ("3 deterministic grid", Box::new(|| c03_grid(&dir("c03")))),
        ("4 Bayes refinement", Box::new(|| c04_bayes(&dir("c04")))),
        ("5 high-dim scaling", Box::new(|| c05_highdim(&dir("c05")))),
        ("6 measure robustness", Box::new(|| c06_robustness(&dir("c06")))),
        ("7 bifurcation", Box::new(|| c07_bifurcation(&dir("c07")))),
        ("8 IB sweep", Box::new(|| c08_ib(&dir("c08")))),
        ("9 gradient checks", Box::new(c09_gradients)),
        ("10 desk NN sweep", Box::new(|| c10_nn_desk(&dir("c10")))),
        ("11 desk Duffing", Box::new(|| c11_duffing_desk(&dir("c11")))),
        ("12 statistics oracles", Box::new(c12_stats)),
        ("13 solver cross-validation", Box::new(c13_solvers)),
    ];
    let mut failures = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<32} [{secs:7.2}s] {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name:<32} [{secs:7.2}s] {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
