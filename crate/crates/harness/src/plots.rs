//! Plot-data CSVs. Figures themselves are not rendered.

use std::collections::BTreeMap;

use pcgap::gap_analysis::find_bifurcation;
use pcgap::lingauss::solve_covariance;
use pcgap::risk::{angular_profile, Objective};
use pcgap::stats::wilson_ci;

use crate::config::{SweepConfig, Tier};
use crate::records::SweepRecord;

/// Angular grid of the risk-profile plot data.
pub const PROFILE_POINTS: usize = 721;

fn csv(header: &str, columns: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = format!("{header}\n{columns}\n");
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Mean and count of `metric` over groups of records sharing `keys`, in
/// first-seen order.
fn group_mean(recs: &[&SweepRecord], keys: &[&str], metric: &str) -> Vec<(Vec<f64>, f64, f64, usize)> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut key_vals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in recs {
        let kv: Vec<f64> = keys.iter().map(|k| r.param(k)).collect();
        let k = format!("{kv:?}");
        if !groups.contains_key(&k) {
            order.push(k.clone());
            key_vals.insert(k.clone(), kv);
        }
        groups.entry(k).or_default().push(r.metric(metric));
    }
    order
        .into_iter()
        .map(|k| {
            let v = &groups[&k];
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            (key_vals[&k].clone(), m, sd, v.len())
        })
        .collect()
}

/// `(file name, contents)` of every plot-data file of the tier.
pub fn plot_files(cfg: &SweepConfig, records: &[SweepRecord], header: &str) -> Vec<(String, String)> {
    let ok: Vec<&SweepRecord> = records.iter().filter(|r| r.status.is_ok()).collect();
    let mut files = Vec::new();
    match cfg.tier {
        Tier::Verify => {
            for (i, r) in ok.iter().enumerate() {
                let p = pcgap::gap_analysis::ParamPoint::new(
                    r.param("a_s"),
                    r.param("c"),
                    r.param("a_e"),
                    r.param("q_s"),
                    r.param("q_e"),
                );
                let Ok(spec) = p.spec() else { continue };
                let Ok(cov) = solve_covariance(&spec) else { continue };
                let lat = angular_profile(&spec, &cov, Objective::Latent, PROFILE_POINTS);
                let sys = angular_profile(&spec, &cov, Objective::System, PROFILE_POINTS);
                if let (Ok(lat), Ok(sys)) = (lat, sys) {
                    let rows = (0..lat.thetas.len()).map(|k| {
                        format!("{},{},{}", lat.thetas[k].to_degrees(), lat.values[k], sys.values[k])
                    });
                    files.push((
                        format!("risk_profile_{i}.csv"),
                        csv(header, "theta_deg,latent_risk,system_risk", rows),
                    ));
                }
            }
        }
        Tier::LinearGrid => {
            let rows = ok.iter().enumerate().map(|(i, r)| {
                format!(
                    "{i},{},{},{},{},{},{}",
                    r.param("a_s"),
                    r.param("a_e"),
                    r.param("c"),
                    fmt(r.metric("fidelity")),
                    fmt(r.metric("theta_star_deg")),
                    r.flag("nz_optimal")
                )
            });
            files.push((
                "fig1_fidelity_vs_config.csv".into(),
                csv(header, "index,a_s,a_e,c,fidelity,theta_star_deg,nz_optimal", rows),
            ));
        }
        Tier::NnSweep => {
            let per = group_mean(&ok, &["a_s", "a_e", "c", "epsilon"], "fidelity");
            let rows = per.iter().map(|(k, m, sd, n)| format!("{},{},{},{},{m},{sd},{n}", k[0], k[1], k[2], k[3]));
            files.push((
                "fig1_nn_fidelity_by_config.csv".into(),
                csv(header, "a_s,a_e,c,epsilon,mean_fidelity,std_fidelity,n_seeds", rows),
            ));
            let slice: Vec<&SweepRecord> = ok
                .iter()
                .copied()
                .filter(|r| r.param("c") == -0.5 && r.param("epsilon") == 0.05)
                .collect();
            let rows = group_mean(&slice, &["a_s", "a_e"], "fidelity")
                .into_iter()
                .map(|(k, m, _, n)| format!("{},{},{m},{n}", k[0], k[1]));
            files.push((
                "fig2_fidelity_heatmap_c-0.50_eps0.05.csv".into(),
                csv(header, "a_s,a_e,mean_fidelity,n_seeds", rows),
            ));
        }
        Tier::Highdim => {
            let gap = group_mean(&ok, &["n_env"], "gap");
            let fid = group_mean(&ok, &["n_env"], "fidelity");
            let imp = group_mean(&ok, &["n_env"], "improvement_pct");
            let rows = (0..gap.len()).map(|i| {
                format!(
                    "{},{},{},{},{},{}",
                    gap[i].0[0], gap[i].1, gap[i].2, fid[i].1, imp[i].1, gap[i].3
                )
            });
            files.push((
                "fig3_gap_fidelity_vs_n.csv".into(),
                csv(
                    header,
                    "n_env,mean_gap,std_gap,mean_fidelity,mean_improvement_pct,n_configs",
                    rows,
                ),
            ));
        }
        Tier::Duffing => {
            let dom = group_mean(&ok, &["alpha_e", "gamma_se", "grounded"], "env_dominant");
            let rows = dom.iter().map(|(k, m, _, n)| {
                format!("{},{},{},{n},{},{m}", k[0], k[1], k[2] == 1.0, (m * *n as f64).round())
            });
            files.push((
                "fig4_dominance_heatmap.csv".into(),
                csv(header, "alpha_e,gamma_se,grounded,n,n_dominant,fraction", rows),
            ));
            let mut rows = Vec::new();
            for g in [0.0, 1.0] {
                let v: Vec<&&SweepRecord> = ok.iter().filter(|r| r.param("grounded") == g).collect();
                let k = v.iter().filter(|r| r.flag("env_dominant")).count() as u64;
                if let Ok(w) = wilson_ci(k, v.len() as u64, 0.95) {
                    rows.push(format!(
                        "{},{},{k},{},{},{}",
                        g == 1.0,
                        v.len(),
                        w.estimate,
                        w.ci_low.unwrap_or(f64::NAN),
                        w.ci_high.unwrap_or(f64::NAN)
                    ));
                }
            }
            files.push((
                "fig5_dominance_ci.csv".into(),
                csv(header, "grounded,n,n_dominant,estimate,ci_low,ci_high", rows),
            ));
            let rows = ok.iter().map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    r.param("alpha_e"),
                    r.param("gamma_se"),
                    r.param("grounded") == 1.0,
                    r.seed,
                    fmt(r.metric("ratio")),
                    fmt(r.metric("inflation"))
                )
            });
            files.push((
                "fig5_ood_scatter.csv".into(),
                csv(header, "alpha_e,gamma_se,grounded,seed,ratio,inflation", rows),
            ));
        }
        Tier::Bifurcation => {
            let grid = cfg.setting_usize("grid").unwrap_or(64);
            for (i, r) in ok.iter().enumerate() {
                let base = pcgap::gap_analysis::ParamPoint::new(
                    r.param("a_s"),
                    r.param("c"),
                    r.param("a_e"),
                    r.param("q_s"),
                    r.param("q_e"),
                );
                if let Ok(b) = find_bifurcation(&base, r.param("c_lo"), r.param("c_hi"), grid) {
                    let rows = b
                        .second_derivative
                        .iter()
                        .zip(&b.theta_star_path)
                        .map(|(d, t)| format!("{},{},{}", d.0, d.1, t.1));
                    files.push((
                        format!("bifurcation_path_{i}.csv"),
                        csv(header, "c,d2r_dtheta2_at_0,theta_star_deg", rows),
                    ));
                }
            }
        }
        Tier::Ib => {
            let rows = ok.iter().map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    r.param("a_s"),
                    r.param("c"),
                    r.param("a_e"),
                    r.param("beta"),
                    fmt(r.metric("theta_star_deg")),
                    fmt(r.metric("nz_distance_deg"))
                )
            });
            files.push((
                "ib_theta_vs_beta.csv".into(),
                csv(header, "a_s,c,a_e,beta,theta_star_deg,nz_distance_deg", rows),
            ));
        }
    }
    files
}
