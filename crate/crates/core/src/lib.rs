//! Debiased out-of-sample performance estimation for data-driven
//! optimization models.
//!
//! The crate evaluates a fitted decision rule on the data it was
//! trained on and removes the optimistic bias of that apparent cost
//! with an influence-function correction, alongside cross-validation,
//! bootstrap and jackknife baselines. A Monte Carlo harness replicates
//! generate/fit/evaluate cycles on portfolio, newsvendor and regression
//! instances and writes bias, MSE and decision-selection reports.

pub mod baselines;
pub mod data;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod fitters;
pub mod harness;
pub mod influence;
pub mod numkit;
pub mod par;
pub mod problems;

pub use data::Dataset;
pub use error::{Error, Result};
pub use numkit::Matrix;
