//! Sweep configuration: one JSON document per run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pcgap::gap_analysis::{
    ETA0, GRID_COUPLED_A_E, GRID_COUPLED_A_S, GRID_C_NEG, GRID_C_POS, GRID_DIAG_A_E, GRID_DIAG_A_S, GRID_Q_E, GRID_Q_S,
    HIGHDIM_C, HIGHDIM_Q_S, IB_BETAS,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    LinearGrid,
    NnSweep,
    Highdim,
    Duffing,
    Verify,
    Bifurcation,
    Ib,
}

impl Tier {
    pub const ALL: [Tier; 7] = [
        Tier::Verify,
        Tier::LinearGrid,
        Tier::NnSweep,
        Tier::Highdim,
        Tier::Ib,
        Tier::Bifurcation,
        Tier::Duffing,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::LinearGrid => "linear_grid",
            Tier::NnSweep => "nn_sweep",
            Tier::Highdim => "highdim",
            Tier::Duffing => "duffing",
            Tier::Verify => "verify",
            Tier::Bifurcation => "bifurcation",
            Tier::Ib => "ib",
        }
    }

    fn grid_names(&self) -> &'static [&'static str] {
        match self {
            Tier::Verify => &["eta"],
            Tier::LinearGrid => &LINEAR_GRID_AXES,
            Tier::NnSweep => &["a_s", "a_e", "c", "epsilon"],
            Tier::Highdim => &["n_env", "c", "q_s"],
            Tier::Ib => &IB_AXES,
            Tier::Bifurcation => &["eta", "c_range"],
            Tier::Duffing => &["alpha_e", "gamma_se", "grounded"],
        }
    }

    fn setting_names(&self) -> &'static [&'static str] {
        match self {
            Tier::Verify => &["robust_radius", "robust_samples"],
            Tier::LinearGrid | Tier::Ib => &[],
            Tier::NnSweep => &[
                "q_e",
                "trajectories",
                "length",
                "epochs",
                "learning_rate",
                "fidelity_points",
                "fd_step",
                "max_configs",
            ],
            Tier::Highdim => &["a_s", "q_e", "restarts"],
            Tier::Bifurcation => &["grid"],
            Tier::Duffing => &["train_count", "length", "epochs", "test_count", "threshold"],
        }
    }
}

const LINEAR_GRID_AXES: [&str; 7] = [
    "diag_a_s",
    "diag_a_e",
    "coupled_a_s",
    "coupled_a_e",
    "coupled_c",
    "q_s",
    "q_e",
];

const IB_AXES: [&str; 9] = [
    "eta",
    "beta",
    "diag_a_s",
    "diag_a_e",
    "coupled_a_s",
    "coupled_a_e",
    "coupled_c",
    "q_s",
    "q_e",
];

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Tier::ALL
            .into_iter()
            .find(|t| t.as_str() == s || t.as_str().replace('_', "-") == s)
            .ok_or_else(|| HarnessError::InvalidConfig(format!("unknown tier '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub tier: Tier,
    pub scale: Scale,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    /// Per-axis value lists.
    pub grids: BTreeMap<String, Vec<f64>>,
    /// Scalar budgets and fixed parameters.
    pub settings: BTreeMap<String, f64>,
}

fn map<V: Clone>(entries: &[(&str, V)]) -> BTreeMap<String, V> {
    entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn linear_grid_axes() -> Vec<(&'static str, Vec<f64>)> {
    let mut coupled_c = GRID_C_NEG.to_vec();
    coupled_c.extend_from_slice(&GRID_C_POS);
    vec![
        ("diag_a_s", GRID_DIAG_A_S.to_vec()),
        ("diag_a_e", GRID_DIAG_A_E.to_vec()),
        ("coupled_a_s", GRID_COUPLED_A_S.to_vec()),
        ("coupled_a_e", GRID_COUPLED_A_E.to_vec()),
        ("coupled_c", coupled_c),
        ("q_s", vec![GRID_Q_S]),
        ("q_e", vec![GRID_Q_E]),
    ]
}

pub const NN_A_S: [f64; 7] = [0.01, 0.05, 0.1, 0.3, 0.5, 0.7, 0.9];
pub const NN_A_E: [f64; 7] = [0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.98];
pub const NN_C: [f64; 10] = [-0.95, -0.8, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.8, 0.95];
pub const NN_EPSILON: [f64; 5] = [0.05, 0.2, 0.5, 1.0, 2.0];

impl SweepConfig {
    /// Default configuration of a tier at a scale. Desk and full differ
    /// only in values, never in code path.
    pub fn template(tier: Tier, scale: Scale) -> Self {
        let full = scale == Scale::Full;
        let eta = ETA0.to_array().to_vec();
        let (grids, settings, seeds): (Vec<(&str, Vec<f64>)>, Vec<(&str, f64)>, Vec<u64>) = match tier {
            Tier::Verify => (
                vec![("eta", eta)],
                vec![("robust_radius", 0.01), ("robust_samples", 1000.0)],
                vec![0],
            ),
            Tier::LinearGrid => (linear_grid_axes(), vec![], vec![0]),
            Tier::Ib => {
                let mut g = linear_grid_axes();
                g.push(("eta", eta));
                g.push(("beta", IB_BETAS.to_vec()));
                (g, vec![], vec![0])
            }
            Tier::Bifurcation => (
                vec![("eta", eta), ("c_range", vec![-0.90, 0.0])],
                vec![("grid", 64.0)],
                vec![0],
            ),
            Tier::NnSweep => (
                vec![
                    ("a_s", NN_A_S.to_vec()),
                    ("a_e", NN_A_E.to_vec()),
                    ("c", NN_C.to_vec()),
                    ("epsilon", NN_EPSILON.to_vec()),
                ],
                vec![
                    ("q_e", 0.10),
                    ("trajectories", if full { 5000.0 } else { 500.0 }),
                    ("length", 20.0),
                    ("epochs", if full { 2000.0 } else { 300.0 }),
                    ("learning_rate", 1e-3),
                    ("fidelity_points", 1000.0),
                    ("fd_step", 1e-4),
                    ("max_configs", if full { 0.0 } else { 20.0 }),
                ],
                if full { (0..5).collect() } else { vec![0, 1] },
            ),
            Tier::Highdim => (
                vec![
                    ("n_env", if full { vec![10.0, 50.0, 100.0] } else { vec![10.0, 50.0] }),
                    ("c", HIGHDIM_C.to_vec()),
                    ("q_s", HIGHDIM_Q_S.to_vec()),
                ],
                vec![
                    ("a_s", 0.05),
                    ("q_e", 0.10),
                    ("restarts", if full { 500.0 } else { 50.0 }),
                ],
                vec![0],
            ),
            Tier::Duffing => (
                vec![
                    (
                        "alpha_e",
                        if full { vec![0.01, 0.03, 0.1, 0.3] } else { vec![0.01, 0.1] },
                    ),
                    (
                        "gamma_se",
                        if full { vec![0.1, 0.5, 1.0, 2.0, 5.0] } else { vec![1.0, 5.0] },
                    ),
                    ("grounded", vec![0.0, 1.0]),
                ],
                vec![
                    ("train_count", 40.0),
                    ("length", 80.0),
                    ("epochs", 60.0),
                    ("test_count", 200.0),
                    ("threshold", 1.0),
                ],
                if full { vec![0, 1, 2] } else { vec![0, 1] },
            ),
        };
        SweepConfig {
            tier,
            scale,
            seeds,
            output_dir: PathBuf::from("results"),
            parallelism: 1,
            grids: map(&grids),
            settings: map(&settings),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        check_keys("grids", self.grids.keys(), self.tier.grid_names())?;
        check_keys("settings", self.settings.keys(), self.tier.setting_names())?;
        for (k, v) in &self.grids {
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("grid '{k}' holds a non-finite value"));
            }
        }
        for (k, v) in &self.settings {
            if !v.is_finite() {
                return bad(format!("setting '{k}' is not finite"));
            }
        }
        if let Some(eta) = self.grids.get("eta") {
            if eta.len() % 5 != 0 {
                return bad("grid 'eta' must hold groups of 5 values (a_s, c, a_e, q_s, q_e)".into());
            }
        }
        if let Some(r) = self.grids.get("c_range") {
            if r.len() != 2 || !(r[0] < r[1]) {
                return bad("grid 'c_range' must be [c_lo, c_hi] with c_lo < c_hi".into());
            }
        }
        if let Some(g) = self.grids.get("grounded") {
            if g.iter().any(|x| *x != 0.0 && *x != 1.0) {
                return bad("grid 'grounded' takes only 0 and 1".into());
            }
        }
        for name in self.tier.setting_names() {
            if INTEGER_SETTINGS.contains(name) {
                self.setting_usize(name)?;
            }
        }
        Ok(())
    }

    pub fn grid(&self, name: &str) -> Result<&[f64]> {
        self.grids
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| HarnessError::InvalidConfig(format!("missing grid '{name}'")))
    }

    pub fn setting(&self, name: &str) -> Result<f64> {
        self.settings
            .get(name)
            .copied()
            .ok_or_else(|| HarnessError::InvalidConfig(format!("missing setting '{name}'")))
    }

    pub fn setting_usize(&self, name: &str) -> Result<usize> {
        let v = self.setting(name)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(HarnessError::InvalidConfig(format!(
                "setting '{name}' must be a nonnegative integer, got {v}"
            )));
        }
        Ok(v as usize)
    }

    /// SHA-256 of the fields that determine results. Output location and
    /// parallelism are excluded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::json!({
            "tier": self.tier,
            "scale": self.scale,
            "seeds": self.seeds,
            "grids": self.grids,
            "settings": self.settings,
        });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Directory holding this tier's outputs.
    pub fn tier_dir(&self) -> PathBuf {
        self.output_dir.join(self.tier.as_str())
    }
}

const INTEGER_SETTINGS: [&str; 10] = [
    "robust_samples",
    "trajectories",
    "length",
    "epochs",
    "fidelity_points",
    "max_configs",
    "restarts",
    "grid",
    "train_count",
    "test_count",
];

fn check_keys<'a>(what: &str, keys: impl Iterator<Item = &'a String>, allowed: &[&str]) -> Result<()> {
    let keys: Vec<&String> = keys.collect();
    if let Some(k) = keys.iter().find(|k| !allowed.contains(&k.as_str())) {
        return Err(HarnessError::InvalidConfig(format!("unknown {what} key '{k}'")));
    }
    if let Some(k) = allowed.iter().find(|a| !keys.iter().any(|k| k == *a)) {
        return Err(HarnessError::InvalidConfig(format!("missing {what} key '{k}'")));
    }
    Ok(())
}

/// Header line carried by every output file.
pub fn header_line(cfg: &SweepConfig) -> String {
    format!("# pcgap {} config_sha256={}", crate::VERSION, cfg.hash())
}
