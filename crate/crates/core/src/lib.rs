//! Marginal Cox proportional hazards analysis for clustered, right-censored
//! time-to-event data, aimed at cluster randomized trials with few clusters.
//!
//! The crate provides:
//!
//! - a validated data model for clustered survival records ([`data`]),
//! - an independence-working-correlation Cox fit with Breslow baseline hazard,
//!   per-cluster scores and gradients ([`cox`]),
//! - the uncorrected robust sandwich covariance plus nine small-sample
//!   corrections (multiplicative, additive, martingale-residual based, and
//!   their hybrids) ([`variance`]),
//! - Wald t-tests with cluster-count degrees of freedom ([`inference`]),
//! - a Clayton-copula trial generator with Weibull marginals and calibrated
//!   censoring ([`sim`]),
//! - a deterministic, parallel Monte Carlo harness for relative-bias and
//!   type-I-error studies ([`mc`]),
//! - CSV / grid-file formats shared with the `marcox` CLI ([`csvio`],
//!   [`mc::gridfile`]).

pub mod cox;
pub mod csvio;
pub mod data;
pub mod inference;
pub mod mc;
pub mod rng;
pub mod sim;
pub mod variance;

mod grid;
mod linalg;
mod special;

pub use cox::{FitOptions, FitResult};
pub use data::{RawSubject, RiskSums, Subject, TrialData};
pub use inference::TestResult;
pub use sim::Scenario;
pub use variance::{EstimatorKind, EstimatorLabel, VarianceEstimate};
