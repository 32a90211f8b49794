//! Per-tier aggregates recomputed from raw records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use pcgap::stats::{fisher_exact, mann_whitney_u, summarize, wilson_ci, StatResult};
use serde_json::{json, Map, Value};

use crate::config::Tier;
use crate::records::SweepRecord;

/// Dominance threshold used for the robustness row of the Duffing report.
pub const STRICT_DOMINANCE: f64 = 1.05;

fn stat(r: pcgap::error::Result<StatResult>) -> Value {
    match r {
        Ok(s) => serde_json::to_value(s).expect("stat result serializes"),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn summary(values: &[f64], thresholds: &[f64]) -> Value {
    match summarize(values, thresholds) {
        Ok(s) => serde_json::to_value(s).expect("summary serializes"),
        Err(_) => Value::Null,
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn pop_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn metric(ok: &[&SweepRecord], name: &str) -> Vec<f64> {
    ok.iter().map(|r| r.metric(name)).collect()
}

/// Records grouped by a formatted key, in first-seen order.
fn group_by<'a>(recs: &[&'a SweepRecord], key: impl Fn(&SweepRecord) -> String) -> Vec<(String, Vec<&'a SweepRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&SweepRecord>> = BTreeMap::new();
    for r in recs {
        let k = key(r);
        if !groups.contains_key(&k) {
            order.push(k.clone());
        }
        groups.entry(k).or_default().push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let v = groups.remove(&k).unwrap_or_default();
            (k, v)
        })
        .collect()
}

pub fn aggregate(tier: Tier, records: &[SweepRecord]) -> Value {
    let ok: Vec<&SweepRecord> = records.iter().filter(|r| r.status.is_ok()).collect();
    let mut out = Map::new();
    out.insert("tier".into(), json!(tier.as_str()));
    out.insert("n_records".into(), json!(records.len()));
    out.insert("n_ok".into(), json!(ok.len()));
    out.insert("n_failed".into(), json!(records.len() - ok.len()));
    let body = match tier {
        Tier::Verify => verify(&ok),
        Tier::LinearGrid => linear_grid(&ok),
        Tier::Ib => ib(&ok),
        Tier::Bifurcation => bifurcation(&ok),
        Tier::NnSweep => nn_sweep(&ok),
        Tier::Highdim => highdim(&ok),
        Tier::Duffing => duffing(&ok),
    };
    if let Value::Object(m) = body {
        out.extend(m);
    }
    Value::Object(out)
}

fn verify(ok: &[&SweepRecord]) -> Value {
    let points: Vec<Value> = ok
        .iter()
        .map(|r| json!({ "params": r.params, "metrics": r.metrics }))
        .collect();
    json!({ "points": points })
}

fn linear_grid(ok: &[&SweepRecord]) -> Value {
    let diag: Vec<&&SweepRecord> = ok.iter().filter(|r| r.param("c") == 0.0).collect();
    let coupled: Vec<&&SweepRecord> = ok.iter().filter(|r| r.param("c") != 0.0).collect();
    let n_nz = ok.iter().filter(|r| r.flag("nz_optimal")).count();
    json!({
        "n_configs": ok.len(),
        "n_nz_optimal": n_nz,
        "frac_suboptimal": if ok.is_empty() { 0.0 } else { (ok.len() - n_nz) as f64 / ok.len() as f64 },
        "n_diagonal": diag.len(),
        "n_diagonal_nz_optimal": diag.iter().filter(|r| r.flag("nz_optimal")).count(),
        "n_diagonal_fidelity_one": diag.iter().filter(|r| r.metric("fidelity") == 1.0).count(),
        "n_coupled": coupled.len(),
        "n_coupled_nz_optimal": coupled.iter().filter(|r| r.flag("nz_optimal")).count(),
        "n_coupled_fidelity_below_one": coupled.iter().filter(|r| r.metric("fidelity") < 1.0).count(),
    })
}

fn ib(ok: &[&SweepRecord]) -> Value {
    let groups = group_by(ok, |r| {
        format!(
            "{:?},{:?},{:?},{:?},{:?}",
            r.param("a_s"),
            r.param("c"),
            r.param("a_e"),
            r.param("q_s"),
            r.param("q_e")
        )
    });
    let mut configs = Vec::new();
    let mut coupled_reaching = 0;
    let mut n_coupled = 0;
    let mut min_coupled = f64::INFINITY;
    for (_, g) in &groups {
        let d: Vec<f64> = g.iter().map(|r| r.metric("nz_distance_deg")).collect();
        let min_d = d.iter().copied().fold(f64::INFINITY, f64::min);
        let c = g[0].param("c");
        if c != 0.0 {
            n_coupled += 1;
            min_coupled = min_coupled.min(min_d);
            if min_d < 0.1 {
                coupled_reaching += 1;
            }
        }
        configs.push(json!({
            "params": g[0].params.iter().filter(|(k, _)| *k != "beta").collect::<BTreeMap<_, _>>(),
            "min_nz_distance_deg": min_d,
            "compression_deg": g[0].metric("compression_deg"),
            "theta_star_deg": g.iter().map(|r| (r.param("beta"), r.metric("theta_star_deg"))).collect::<Vec<_>>(),
        }));
    }
    json!({
        "n_configs": groups.len(),
        "n_coupled": n_coupled,
        "n_coupled_within_0_1_deg_of_nz": coupled_reaching,
        "min_coupled_nz_distance_deg": min_coupled,
        "configs": configs,
    })
}

fn bifurcation(ok: &[&SweepRecord]) -> Value {
    let results: Vec<Value> = ok
        .iter()
        .map(|r| json!({ "params": r.params, "metrics": r.metrics }))
        .collect();
    json!({ "results": results })
}

fn nn_sweep(ok: &[&SweepRecord]) -> Value {
    let fid = metric(ok, "fidelity");
    let beats = ok.iter().filter(|r| r.flag("nn_beats_linear")).count();
    let ratio = metric(ok, "risk_ratio");
    let groups = group_by(ok, |r| {
        format!("{:?},{:?},{:?},{:?}", r.param("a_s"), r.param("a_e"), r.param("c"), r.param("epsilon"))
    });
    let mut per_config: Vec<(f64, Value)> = groups
        .iter()
        .map(|(_, g)| {
            let f: Vec<f64> = g.iter().map(|r| r.metric("fidelity")).collect();
            let m = mean(&f);
            (
                m,
                json!({
                    "a_s": g[0].param("a_s"),
                    "a_e": g[0].param("a_e"),
                    "c": g[0].param("c"),
                    "epsilon": g[0].param("epsilon"),
                    "mean_fidelity": m,
                    "std_fidelity": pop_std(&f),
                    "n_seeds": g.len(),
                }),
            )
        })
        .collect();
    per_config.sort_by(|a, b| b.0.total_cmp(&a.0));
    let best: Vec<Value> = per_config.iter().take(5).map(|x| x.1.clone()).collect();
    let worst: Vec<Value> = per_config.iter().rev().take(5).map(|x| x.1.clone()).collect();
    json!({
        "fidelity": summary(&fid, &[0.5, 0.7]),
        "fidelity_in_unit_interval": fid.iter().all(|f| (0.0..=1.0).contains(f)),
        "n_nn_beats_linear": beats,
        "frac_nn_beats_linear": if ok.is_empty() { 0.0 } else { beats as f64 / ok.len() as f64 },
        "mean_risk_ratio": mean(&ratio),
        "degenerate_points": metric(ok, "fidelity_excluded").iter().sum::<f64>(),
        "best_configs": best,
        "worst_configs": worst,
    })
}

fn highdim(ok: &[&SweepRecord]) -> Value {
    let rows: Vec<Value> = group_by(ok, |r| format!("{}", r.param("n_env")))
        .into_iter()
        .map(|(_, g)| {
            let gap = metric(&g, "gap");
            let fid = metric(&g, "fidelity");
            json!({
                "n_env": g[0].param("n_env"),
                "n_configs": g.len(),
                "mean_gap": mean(&gap),
                "std_gap": pop_std(&gap),
                "mean_fidelity": mean(&fid),
                "max_fidelity": fid.iter().copied().fold(0.0, f64::max),
                "mean_improvement_pct": mean(&metric(&g, "improvement_pct")),
                "mean_r_nz": mean(&metric(&g, "r_nz")),
                "mean_r_star": mean(&metric(&g, "r_star")),
                "min_converged_fraction": metric(&g, "converged_fraction").iter().copied().fold(1.0, f64::min),
            })
        })
        .collect();
    json!({ "by_n_env": rows })
}

fn duffing(ok: &[&SweepRecord]) -> Value {
    let mode = |grounded: bool| -> Vec<&SweepRecord> {
        ok.iter()
            .copied()
            .filter(|r| (r.param("grounded") == 1.0) == grounded)
            .collect()
    };
    let unc = mode(false);
    let gr = mode(true);
    let dominant = |v: &[&SweepRecord], t: f64| v.iter().filter(|r| r.metric("ratio") > t).count() as u64;
    let mode_json = |v: &[&SweepRecord]| {
        let n = v.len() as u64;
        let k = dominant(v, 1.0);
        let k_strict = dominant(v, STRICT_DOMINANCE);
        json!({
            "n": n,
            "n_dominant": k,
            "dominance": stat(wilson_ci(k, n, 0.95)),
            "n_dominant_strict": k_strict,
            "dominance_strict": stat(wilson_ci(k_strict, n, 0.95)),
            "inflation": summary(&metric(v, "inflation"), &[]),
            "val_mse": summary(&metric(v, "val_mse"), &[]),
        })
    };
    let (ku, kg) = (dominant(&unc, 1.0), dominant(&gr, 1.0));
    let fisher = stat(fisher_exact(ku, unc.len() as u64 - ku, kg, gr.len() as u64 - kg));
    let inf_u = metric(&unc, "inflation");
    let inf_g = metric(&gr, "inflation");
    let mw = if inf_u.is_empty() || inf_g.is_empty() {
        json!({ "error": "empty sample" })
    } else {
        stat(mann_whitney_u(&inf_u, &inf_g))
    };
    let med = |v: &[f64]| summarize(v, &[]).map(|s| s.median).unwrap_or(f64::NAN);
    json!({
        "unconstrained": mode_json(&unc),
        "grounded": mode_json(&gr),
        "fisher_dominance": fisher,
        "mann_whitney_inflation": mw,
        "median_inflation_unconstrained_exceeds_grounded": med(&inf_u) > med(&inf_g),
    })
}

/// Two-column text rendering of a JSON report.
pub fn render_text(v: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", v, &mut rows);
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
    out
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                flatten(&join(k), x, rows);
            }
        }
        Value::Array(a) if a.iter().any(|x| x.is_object()) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&join(&i.to_string()), x, rows);
            }
        }
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::TaskStatus;

    fn duff(grounded: f64, seed: u64, ratio: f64, inflation: f64) -> SweepRecord {
        SweepRecord {
            tier: Tier::Duffing,
            params: [
                ("alpha_e".to_string(), 0.1),
                ("gamma_se".to_string(), 1.0),
                ("grounded".to_string(), grounded),
            ]
            .into(),
            seed,
            metrics: [
                ("ratio".to_string(), ratio),
                ("inflation".to_string(), inflation),
                ("val_mse".to_string(), 0.1),
            ]
            .into(),
            status: TaskStatus::Ok,
        }
    }

    #[test]
    fn empty_results_do_not_crash() {
        for tier in Tier::ALL {
            let v = aggregate(tier, &[]);
            assert_eq!(v["n_records"], 0);
            assert!(!render_text(&v).is_empty());
        }
    }

    #[test]
    fn duffing_table_counts() {
        let mut recs = Vec::new();
        for s in 0..4 {
            recs.push(duff(0.0, s, if s < 3 { 1.2 } else { 0.9 }, 1.8 + s as f64 * 0.01));
            recs.push(duff(1.0, s, if s < 1 { 1.02 } else { 0.8 }, 1.0 + s as f64 * 0.01));
        }
        let v = aggregate(Tier::Duffing, &recs);
        assert_eq!(v["unconstrained"]["n_dominant"], 3);
        assert_eq!(v["grounded"]["n_dominant"], 1);
        assert_eq!(v["grounded"]["n_dominant_strict"], 0);
        assert_eq!(v["median_inflation_unconstrained_exceeds_grounded"], true);
        assert!(v["fisher_dominance"]["p_value"].as_f64().unwrap() <= 1.0);
    }
}
