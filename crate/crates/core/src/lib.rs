//! Estimation and weak-identification-robust inference for linear IV models
//! with many instruments and many exogenous controls.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`] builds projection/annihilator matrices, hat values and
//!   leave-out downdates.
//! * [`estimators`] computes TSLS, the jack-knife estimators and the
//!   zero-diagonal many-controls estimator.
//! * [`variance`] holds the normalizing-factor estimators for the robust
//!   statistics.
//! * [`inference`] holds the leave-one-out AR and LM tests, the AR test with
//!   many controls, the identification pre-test and confidence-set inversion.
//! * [`montecarlo`] generates seeded designs and aggregates size, power and
//!   bias experiments.

pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod montecarlo;
pub mod variance;

pub use ndarray;

pub use data::Dataset;
pub use error::{IvError, Result};
pub use estimators::{EstimateOutcome, EstimatorId};
pub use inference::{
    ConfidenceSet, Interval, PretestOutcome, Sidedness, TestFlag, TestId, TestOutcome, ZeroDiagA,
};
pub use linalg::ProjectionBundle;
pub use montecarlo::{SimDesign, SimReport};
pub use variance::{VarianceEstimate, VarianceId};
