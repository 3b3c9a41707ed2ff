//! Differential testing of local models: per class, iteratively optimize a
//! batch of validation images to widen the gap between two clusters of model
//! predictions, then score every agent by how far its cluster sits from the
//! majority.

mod generate;
mod kmeans;
mod pca;

pub use generate::{
    differential_step, generate_diff_inputs_and_scores, mean_softmax_predictions,
    separation_gradient, separation_objective, ClassProjection, DiffTestOutput,
};
pub use kmeans::{cluster_two, ClusterResult};
pub use pca::{pca_project, PcaMap};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fl::AgentId;

/// Per-class, per-agent deviation scores emitted by differential testing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreMatrix {
    /// `entries[class_row][agent_col]`, non-negative and finite.
    pub entries: Vec<Vec<f64>>,
    pub class_ids: Vec<usize>,
    pub agent_ids: Vec<AgentId>,
}

impl ScoreMatrix {
    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != self.class_ids.len() {
            return Err(SimError::ShapeMismatch(
                "score matrix row count does not match class ids".into(),
            ));
        }
        for row in &self.entries {
            if row.len() != self.agent_ids.len() {
                return Err(SimError::ShapeMismatch(
                    "score matrix column count does not match agent ids".into(),
                ));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(SimError::MalformedData(
                    "score matrix entries must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Differential input generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffTestConfig {
    /// Gradient-ascent step size s.
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    /// Ascent iterations t per class.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// PCA dimensionality d.
    #[serde(default = "default_pca_dims")]
    pub pca_dims: usize,
}

fn default_step_size() -> f64 {
    0.5
}

fn default_iterations() -> usize {
    20
}

fn default_pca_dims() -> usize {
    2
}

impl Default for DiffTestConfig {
    fn default() -> Self {
        DiffTestConfig {
            step_size: default_step_size(),
            iterations: default_iterations(),
            pca_dims: default_pca_dims(),
        }
    }
}

impl DiffTestConfig {
    /// `k` is the participant count, `c` the class count; `pca_dims` must not
    /// exceed either.
    pub fn validate(&self, k: usize, c: usize) -> Result<()> {
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(SimError::config("step_size must be positive"));
        }
        if self.iterations == 0 {
            return Err(SimError::config("iterations must be >= 1"));
        }
        if self.pca_dims == 0 || self.pca_dims > k.min(c) {
            return Err(SimError::config(format!(
                "pca_dims {} must be in [1, min(K={k}, C={c})]",
                self.pca_dims
            )));
        }
        Ok(())
    }
}
