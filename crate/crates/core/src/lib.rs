//! Deterministic desk-scale simulator of a federated learning system under
//! backdoor attack.
//!
//! The crate covers the full loop: non-iid data partitioning, local SGD
//! (benign and adversarial with weight scaling), a differential-testing
//! defense that flags outlier agents through two-step MAD detection, the
//! Multi-Krum and coordinate-wise-median baselines, and an experiment
//! harness with reproducible seeds, JSONL round records, and SVG plots.
//!
//! Every stochastic stage derives its own seed from the master seed, so runs
//! are bit-reproducible from `(config, master_seed)` regardless of thread
//! scheduling.

pub mod data;
pub mod difftest;
pub mod error;
pub mod fl;
pub mod harness;
pub mod image;
pub mod nn;
pub mod outlier;
pub mod params;
pub mod rng;
pub mod robust;
pub mod train;

pub use error::{Result, SimError};
pub use fl::{Agent, AgentId, AgentRole, AggregationMethod, GlobalState, RoundRecord};
pub use harness::{ExperimentConfig, MetricsSummary};
pub use image::{ImageBatch, LabeledDataset};
pub use params::{LayoutId, ParamVector};
