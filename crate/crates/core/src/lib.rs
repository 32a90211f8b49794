//! Numerical laboratory for the predictive-causal gap.
//!
//! A one-dimensional encoder trained to predict its own next latent value
//! from a composite state `(s, e)` does not, in general, read out the system
//! coordinate `s`. This crate computes that effect exactly for linear-Gaussian
//! dynamics, verifies the associated inequalities numerically, and measures it
//! empirically for MLP encoders and GRU predictors trained from scratch.
//!
//! Modules:
//!
//! - [`lingauss`]: stable upper block-triangular dynamics, stationary covariance
//!   (discrete Lyapunov equation), seeded trajectory sampling.
//! - [`risk`]: latent self-prediction, system-prediction and information
//!   bottleneck risks of a fixed linear encoder; angular risk profiles in 2D.
//! - [`encoder_opt`]: projected descent on the unit sphere with random
//!   restarts, and the Bayes-optimal encoder via a symmetric eigenproblem.
//! - [`gap_analysis`]: the NZ-suboptimality gap, counterexample verification,
//!   robustness sampling, boundary bifurcation in the coupling, IB sweeps and
//!   the deterministic 160-configuration grid.
//! - [`neural`]: MLP encoder and GRU predictor with hand-written gradients,
//!   Adam, gradient checking and the finite-difference fidelity metric.
//! - [`duffing`]: Duffing oscillator driven by a hidden OU environment,
//!   environment dominance and OOD inflation.
//! - [`stats`]: Wilson intervals, Fisher's exact test, Mann-Whitney U and
//!   distribution summaries.
//!
//! All arithmetic is `f64`. Every random quantity is drawn from a
//! [`rng::stream`] derived from an explicit seed, so results are reproducible.

pub mod duffing;
pub mod encoder_opt;
pub mod error;
pub mod gap_analysis;
pub mod linalg;
pub mod lingauss;
pub mod neural;
pub mod risk;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
