//! Wilson intervals, Fisher's exact test, Mann-Whitney U and summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatMethod {
    Wilson,
    Fisher,
    MannWhitney,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub method: StatMethod,
    pub estimate: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Wilson score interval for `successes` out of `n` at confidence `level`.
pub fn wilson_ci(successes: u64, n: u64, level: f64) -> Result<StatResult> {
    if n == 0 || successes > n {
        return Err(Error::InvalidCount(format!("{successes} successes out of {n}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {level} outside (0, 1)")));
    }
    let z = normal_quantile(0.5 + level / 2.0);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2n = z * z / nf;
    let center = (p + z2n / 2.0) / (1.0 + z2n);
    let half = z / (1.0 + z2n) * (p * (1.0 - p) / nf + z2n / (4.0 * nf)).sqrt();
    let low = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if successes == n { 1.0 } else { (center + half).min(1.0) };
    Ok(StatResult {
        method: StatMethod::Wilson,
        estimate: p,
        ci_low: Some(low),
        ci_high: Some(high),
        p_value: None,
    })
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Fisher's exact test on the table `[[a, b], [c, d]]`.
///
/// Two-sided p sums every margin-preserving table whose probability does
/// not exceed the observed one (relative slack 1e-12). The estimate is the
/// sample odds ratio `ad / bc`.
pub fn fisher_exact(a: u64, b: u64, c: u64, d: u64) -> Result<StatResult> {
    let (r1, r2, c1, c2) = (a + b, c + d, a + c, b + d);
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return Err(Error::DegenerateTable(format!("zero margin in [[{a}, {b}], [{c}, {d}]]")));
    }
    let n = r1 + r2;
    let denom = ln_choose(n, c1);
    let log_p = |x: u64| ln_choose(r1, x) + ln_choose(r2, c1 - x) - denom;
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let observed = log_p(a).exp();
    let cutoff = observed * (1.0 + 1e-12);
    let p: f64 = (lo..=hi).map(|x| log_p(x).exp()).filter(|&q| q <= cutoff).sum();
    let odds = (a as f64 * d as f64) / (b as f64 * c as f64);
    Ok(StatResult {
        method: StatMethod::Fisher,
        estimate: odds,
        ci_low: None,
        ci_high: None,
        p_value: Some(p.min(1.0)),
    })
}

/// Largest pooled sample for which the exact null distribution is computed
/// when one side has fewer than 8 observations.
pub const MW_EXACT_MAX_TOTAL: usize = 1000;

/// Midranks of `values` (1-based), in input order.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Mann-Whitney U test; the estimate is `U` for `x`.
///
/// Exact null distribution (with the observed midranks) when either side
/// has fewer than 8 values and the pooled sample is at most
/// [`MW_EXACT_MAX_TOTAL`]; otherwise the normal approximation with
/// tie-corrected variance and continuity correction.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<StatResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (n, m) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum: f64 = ranks[..n].iter().sum();
    let u = rank_sum - (n * (n + 1)) as f64 / 2.0;

    let p = if n.min(m) < 8 && n + m <= MW_EXACT_MAX_TOTAL {
        exact_mw_p(&ranks, n)
    } else {
        normal_mw_p(&pooled, u, n, m)
    };
    Ok(StatResult {
        method: StatMethod::MannWhitney,
        estimate: u,
        ci_low: None,
        ci_high: None,
        p_value: Some(p),
    })
}

/// Distribution of the doubled rank sum of a random `k`-subset, by dynamic
/// programming over the pooled midranks.
fn exact_mw_p(ranks: &[f64], n: usize) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let k = n.min(ranks.len() - n);
    let small_is_x = k == n;
    let max_sum: usize = {
        let mut d = doubled.clone();
        d.sort_unstable_by(|a, b| b.cmp(a));
        d[..k].iter().sum()
    };
    // ways[j][s]: number of j-subsets with doubled rank sum s
    let mut ways = vec![vec![0.0f64; max_sum + 1]; k + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for j in (1..=k).rev() {
            let (prev, cur) = ways.split_at_mut(j);
            for s in (r..=max_sum).rev() {
                cur[0][s] += prev[j - 1][s - r];
            }
        }
    }
    let total_doubled: usize = doubled.iter().sum();
    let observed: usize = if small_is_x {
        doubled[..n].iter().sum()
    } else {
        doubled[n..].iter().sum()
    };
    // with doubled ranks, 2U - km is an integer shift of the subset sum
    let mean2 = (k * total_doubled) as f64 / ranks.len() as f64;
    let dev = (observed as f64 - mean2).abs();
    let (mut hit, mut all) = (0.0, 0.0);
    for (s, &w) in ways[k].iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        all += w;
        if (s as f64 - mean2).abs() >= dev - 1e-9 {
            hit += w;
        }
    }
    (hit / all).min(1.0)
}

fn normal_mw_p(pooled: &[f64], u: f64, n: usize, m: usize) -> f64 {
    let big_n = (n + m) as f64;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let nm = (n * m) as f64;
    let var = nm / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - nm / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    /// `(threshold, fraction of values strictly above it)`
    pub exceedance: Vec<(f64, f64)>,
}

impl Summary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }

    /// Median with the interquartile range as the interval.
    pub fn as_stat_result(&self) -> StatResult {
        StatResult {
            method: StatMethod::Summary,
            estimate: self.median,
            ci_low: Some(self.q1),
            ci_high: Some(self.q3),
            p_value: None,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64], thresholds: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let exceedance = thresholds
        .iter()
        .map(|&t| (t, values.iter().filter(|&&v| v > t).count() as f64 / n))
        .collect();
    Ok(Summary {
        n: values.len(),
        mean,
        median: quantile_sorted(&sorted, 0.5),
        std: var.sqrt(),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        exceedance,
    })
}
