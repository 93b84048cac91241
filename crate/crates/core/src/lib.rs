//! Statistical blending of a probability sample with a convenience sample.
//!
//! The crate takes a pooled data set — units from a design-based probability
//! sample and units from a non-probability (convenience) sample — and builds
//! a single weighted analysis sample. Four weighting schemes are offered:
//!
//! * **simultaneous propensity-score** weights `1/p̂ᵢ`, where `p̂ᵢ` is the
//!   estimated probability of entering the pooled sample through either door;
//! * **disjoint propensity-score** weights `κ/d̂ᵢ` and `(1-κ)/q̂ᵢ`, which keep
//!   each sample separately representative and blend them with a precision-
//!   optimal coefficient `κ`;
//! * **simultaneous calibration** weights that rake the pooled sample to
//!   benchmark totals;
//! * **disjoint calibration** weights that rake each sample to the same
//!   benchmarks before blending.
//!
//! Estimation is design-based (weighted means, weighted least squares) with
//! variances by Taylor linearization or a delete-a-group jackknife, plus a
//! diagnostic test of whether the two samples may be blended at all and a
//! post-hoc combination rule for already-computed estimates. A simulation
//! module reproduces the two Monte Carlo studies that motivated the design.

pub mod blending;
pub mod calibration;
pub mod config;
pub mod dataset;
pub mod error;
pub mod estimation;
pub mod propensity;
pub mod report;
pub mod simulation;
pub mod variance;
pub mod workflow;

pub use blending::{kish_deff, kish_kappa, KappaRule, Scheme, WeightSet};
pub use dataset::{load_dataset, Dataset, Membership, Schema, Unit};
pub use error::{Error, Result};
