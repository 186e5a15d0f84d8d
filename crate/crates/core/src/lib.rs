//! Individual fairness of binary image classifiers over a continuous skin-tone
//! attribute.
//!
//! Skin pixels become ITA sample distributions ([`color`], [`distribution`]),
//! each distribution is scored by a signed Wasserstein distance from a
//! baseline ([`distance`]), batched performance along that distance is
//! modelled by a Bayesian polynomial regression ([`estimator`]), fairness is
//! summarised by continuous-attribute gap metrics ([`fairness`]), and the
//! estimator drives a reweighted loss ([`mitigation`]) used by a small
//! training harness ([`trainer`]).

pub mod cli;
pub mod color;
pub mod distance;
pub mod distribution;
pub mod error;
pub mod estimator;
pub mod fairness;
pub mod mitigation;
pub mod trainer;

pub use error::{Error, Result};
