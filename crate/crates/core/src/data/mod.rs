//! Dataset handling: non-iid partitioning, backdoor trigger injection, the
//! server's validation seed store, synthetic data, and file IO.

mod backdoor;
mod io;
mod partition;
mod seeds;
mod synth;

pub use backdoor::{apply_pixel_trigger, build_backdoor_testset, poison_batch, CarrierSets};
pub use io::{convert_idx, read_dataset, write_dataset};
pub use partition::dirichlet_partition;
pub use seeds::sample_validation_seeds;
pub use synth::{synthetic_dataset, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Per-agent index lists over a parent dataset; disjoint and covering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub per_agent: Vec<Vec<usize>>,
    pub dirichlet_alpha: f64,
}

impl PartitionPlan {
    /// Checks disjointness and coverage against a parent of `total` samples.
    pub fn validate(&self, total: usize) -> Result<()> {
        let mut seen = vec![false; total];
        for list in &self.per_agent {
            for &ix in list {
                if ix >= total {
                    return Err(SimError::MalformedData(format!(
                        "partition index {ix} out of range for {total} samples"
                    )));
                }
                if seen[ix] {
                    return Err(SimError::MalformedData(format!(
                        "partition index {ix} assigned twice"
                    )));
                }
                seen[ix] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(SimError::MalformedData(format!(
                "partition does not cover index {missing}"
            )));
        }
        Ok(())
    }
}

/// Kind of backdoor carried by the attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackdoorKind {
    /// A white square stamped on the bottom-right corner.
    PixelPattern,
    /// Designated carrier samples, relabeled but otherwise unmodified.
    Semantic,
}

/// Full description of the backdoor: trigger mechanics, poisoning rate, and
/// (for the semantic kind) the attacker-exclusive carrier samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackdoorSpec {
    pub kind: BackdoorKind,
    pub target_class: usize,
    /// Side length in pixels of the stamped square (pixel kind only).
    #[serde(default = "default_trigger_size")]
    pub trigger_size: usize,
    /// Poisoned images per training batch.
    pub poison_per_batch: usize,
    /// Std-dev of the Gaussian noise added to each poisoned image.
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    /// Parent-dataset indices of the semantic carrier samples.
    #[serde(default)]
    pub semantic_sample_ids: Vec<usize>,
    /// (train, held-out test) split sizes over `semantic_sample_ids`.
    #[serde(default)]
    pub semantic_train_test_split: (usize, usize),
}

fn default_trigger_size() -> usize {
    4
}

fn default_noise_sigma() -> f64 {
    0.01
}

impl BackdoorSpec {
    pub fn validate(&self, batch_size: usize, height: usize, width: usize) -> Result<()> {
        if self.poison_per_batch > batch_size {
            return Err(SimError::config(format!(
                "poison_per_batch {} exceeds batch size {batch_size}",
                self.poison_per_batch
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(SimError::config("noise_sigma must be non-negative"));
        }
        match self.kind {
            BackdoorKind::PixelPattern => {
                if self.trigger_size == 0 || self.trigger_size > height.min(width) {
                    return Err(SimError::config(format!(
                        "trigger size {} does not fit a {height}x{width} image",
                        self.trigger_size
                    )));
                }
            }
            BackdoorKind::Semantic => {
                let (train, test) = self.semantic_train_test_split;
                if train + test != self.semantic_sample_ids.len() {
                    return Err(SimError::config(format!(
                        "semantic split {train}+{test} != {} carrier ids",
                        self.semantic_sample_ids.len()
                    )));
                }
                if train == 0 {
                    return Err(SimError::config("semantic attack needs training carriers"));
                }
            }
        }
        Ok(())
    }
}
