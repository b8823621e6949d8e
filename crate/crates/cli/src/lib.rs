//! Command-line driver: configuration, suite dispatch, reports and baselines.

pub mod baseline;
pub mod config;
pub mod run;
pub mod tables;
