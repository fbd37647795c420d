//! Experiment harness for active sampling: synthetic Gaussian-process
//! populations, a crash-scenario grid, classical auxiliary-variable
//! estimators, and a repeated-subsampling runner that tabulates eRMSE and
//! interval coverage.

pub mod application;
pub mod baselines;
pub mod config;
pub mod error;
pub mod experiment;
pub mod synthetic;

pub use error::HarnessError;
