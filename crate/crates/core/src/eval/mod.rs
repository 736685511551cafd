//! Metrics, baselines, reports and sweeps.

pub mod baseline;
pub mod config;
pub mod metrics;
pub mod report;
pub mod sweep;
