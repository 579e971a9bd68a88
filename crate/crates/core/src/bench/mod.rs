//! Metrics, configuration and experiment orchestration.

pub mod config;
pub mod metrics;
pub mod runner;

pub use config::{Algorithm, ExperimentConfig};
pub use metrics::{fsrr, nmse, to_db};
pub use runner::{phase_transition, run_benchmark, MetricsRecord, PhasePoint};
