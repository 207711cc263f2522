//! Capacity-MSE trade-off computation for MIMO joint communication and
//! sensing (JCAS) channels.
//!
//! A transmitter sends `x` over a user channel `y = H x + w` while a co-located
//! sensor observes `z = G(theta) x + u` and estimates `theta`. For a Gaussian
//! input with covariance `Q`, the achievable rate is `log det(I + H Q H^H / s2w)`
//! and the block-length-scaled MSE is the expected inverse conditional Fisher
//! information. This crate computes the optimal trade-off curve between the two,
//! builds the standard ULA direction-of-arrival and OFDM channel-estimation
//! scenarios, and validates the asymptotic MSE characterization by Monte Carlo.
//!
//! Module map:
//! - [`linalg`]: Hermitian helpers, PSD and trace-ball projections.
//! - [`model`]: domain types ([`CovMatrix`], [`UserChannel`], [`SensingModel`], [`Scenario`], ...).
//! - [`information`]: mutual information, information density, Fisher information, ECRB/BCRB.
//! - [`solver`]: capacity-only, sensing-optimal, constrained solves and curve sweeps.
//! - [`scenarios`]: DoA and OFDM builders, priors, beam pattern.
//! - [`montecarlo`]: codebooks, sensor simulation, estimators, empirical checks.
//! - [`exec`]: rayon / sequential execution switch.

// `!(x > 0.0)` is the NaN-rejecting form used for input checks throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod information;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod rng;
pub mod scenarios;
pub mod solver;

pub use error::{Error, Result};
pub use exec::Exec;
pub use linalg::{CMat, CVec};
pub use model::{
    CovMatrix, Jacobian, ParamKind, Prior, Scenario, ScenarioShape, SensingMap, SensingModel, Theta, TradeoffPoint,
    TradeoffStatus, UserChannel, Weights,
};
pub use num_complex::Complex64;
