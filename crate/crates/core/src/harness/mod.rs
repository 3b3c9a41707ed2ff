//! Experiment configuration, metric computation, run orchestration,
//! persistence, and plotting.

pub mod config;
pub mod metrics;
pub mod persist;
pub mod plot;
pub mod runner;

pub use config::{example_config_toml, ExperimentConfig};
pub use metrics::{
    compute_backdoor_accuracy, compute_detection_rates, compute_global_accuracy,
    max_ba_after_convergence, DetectionRates, MaxBaAfterConvergence,
};
pub use runner::{run_experiment, summarize, ExperimentOutcome, MetricsSummary};
