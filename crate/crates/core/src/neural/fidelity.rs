use serde::{Deserialize, Serialize};

use super::MlpEncoder;
use crate::error::{Error, Result};
use crate::linalg::sym_psd_sqrt;
use crate::lingauss::CovarianceSolution;
use crate::rng;

/// Anything that maps a state (s, e) to a scalar.
pub trait ScalarEncoder {
    fn encode(&self, s: f64, e: f64) -> f64;
}

impl ScalarEncoder for MlpEncoder {
    fn encode(&self, s: f64, e: f64) -> f64 {
        MlpEncoder::encode(self, s, e)
    }
}

impl<F: Fn(f64, f64) -> f64> ScalarEncoder for F {
    fn encode(&self, s: f64, e: f64) -> f64 {
        self(s, e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityResult {
    pub fidelity: f64,
    pub used: usize,
    /// Points where both partial derivatives were below 1e-12.
    pub excluded: usize,
}

/// Mean of |∂φ/∂s| / (|∂φ/∂s| + |∂φ/∂e|) over `points`, with centered
/// differences of step `h`.
pub fn finite_diff_fidelity<E: ScalarEncoder + ?Sized>(enc: &E, points: &[[f64; 2]], h: f64) -> Result<FidelityResult> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut sum = 0.0;
    let mut used = 0;
    for &[s, e] in points {
        let ds = ((enc.encode(s + h, e) - enc.encode(s - h, e)) / (2.0 * h)).abs();
        let de = ((enc.encode(s, e + h) - enc.encode(s, e - h)) / (2.0 * h)).abs();
        if ds < 1e-12 && de < 1e-12 {
            continue;
        }
        sum += ds / (ds + de);
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllDegenerate { excluded: points.len() });
    }
    Ok(FidelityResult {
        fidelity: sum / used as f64,
        used,
        excluded: points.len() - used,
    })
}

/// `n` draws from N(0, Σ) for a 2D stationary covariance.
pub fn sample_stationary_points(cov: &CovarianceSolution, n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    if cov.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: cov.dim(),
        });
    }
    let root = sym_psd_sqrt(&cov.sigma)?;
    let mut r = rng::stream(seed, 0);
    Ok((0..n)
        .map(|_| {
            let z0 = rng::normal(&mut r);
            let z1 = rng::normal(&mut r);
            [root[(0, 0)] * z0 + root[(0, 1)] * z1, root[(1, 0)] * z0 + root[(1, 1)] * z1]
        })
        .collect())
}
