//! Declarative experiment configuration, loadable from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{BackdoorKind, BackdoorSpec, SyntheticSpec};
use crate::difftest::DiffTestConfig;
use crate::error::{Result, SimError};
use crate::fl::AggregationMethod;
use crate::nn::arch::ModelArch;
use crate::outlier::MadVariant;
use crate::train::TrainingHyper;

pub const CONFIG_SCHEMA: u32 = 1;

/// Full declarative description of an FL run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub dataset: DatasetConfig,
    pub federation: FederationConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingHyper,
    #[serde(default)]
    pub attack: Option<AttackSection>,
    #[serde(default)]
    pub defense: DefenseSection,
    pub run: RunSection,
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Generated block-pattern data (28x28 grayscale).
    Synthetic {
        train_samples: usize,
        test_samples: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// Binary-layout dataset files (see the data module docs).
    File {
        train_path: PathBuf,
        test_path: PathBuf,
    },
}

fn default_classes() -> usize {
    10
}

fn default_noise() -> f64 {
    0.12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederationConfig {
    pub total_agents: usize,
    pub participation_ratio: f64,
    pub rounds: usize,
    #[serde(default = "default_dirichlet_alpha")]
    pub dirichlet_alpha: f64,
    /// Agent ids acting as adversaries (requires an `[attack]` section).
    #[serde(default)]
    pub adversaries: Vec<usize>,
    /// Global learning rate; defaults to `1 / participation_ratio`.
    #[serde(default)]
    pub eta: Option<f64>,
}

fn default_dirichlet_alpha() -> f64 {
    0.9
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    pub arch: ModelArchOption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ModelArchOption {
    #[default]
    #[serde(rename = "small_cnn")]
    SmallCnn,
    #[serde(rename = "tiny_resnet")]
    TinyResNet,
}

impl From<ModelArchOption> for ModelArch {
    fn from(value: ModelArchOption) -> Self {
        match value {
            ModelArchOption::SmallCnn => ModelArch::SmallCnn,
            ModelArchOption::TinyResNet => ModelArch::TinyResNet,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSection {
    #[serde(default = "default_attack_alpha")]
    pub alpha: f64,
    /// Weight-scaling factor; defaults to `N / eta`.
    #[serde(default)]
    pub scaling_gamma: Option<f64>,
    pub backdoor: BackdoorSpec,
}

fn default_attack_alpha() -> f64 {
    0.7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseSection {
    pub aggregation: AggregationMethod,
    pub detector: MadVariant,
    pub cutoff: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub pca_dims: usize,
    pub validation_seed_count: usize,
    pub validation_seed_classes: usize,
}

impl Default for DefenseSection {
    fn default() -> Self {
        DefenseSection {
            aggregation: AggregationMethod::Defense,
            detector: MadVariant::TwoStep,
            cutoff: 3.0,
            step_size: 0.5,
            iterations: 20,
            pca_dims: 2,
            validation_seed_count: 20,
            validation_seed_classes: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    pub master_seed: u64,
    /// Global-accuracy threshold for the post-convergence backdoor peak.
    #[serde(default)]
    pub convergence_threshold: Option<f64>,
    /// First round included in the mean-backdoor-accuracy window.
    #[serde(default)]
    pub ba_from_round: usize,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| SimError::ConfigParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn participants_per_round(&self) -> usize {
        (self.federation.participation_ratio * self.federation.total_agents as f64).round() as usize
    }

    pub fn eta(&self) -> f64 {
        self.federation
            .eta
            .unwrap_or(1.0 / self.federation.participation_ratio)
    }

    /// The resolved weight-scaling factor `N / eta` unless pinned.
    pub fn scaling_gamma(&self) -> Option<f64> {
        self.attack.as_ref().map(|a| {
            a.scaling_gamma
                .unwrap_or(self.federation.total_agents as f64 / self.eta())
        })
    }

    pub fn difftest_config(&self) -> DiffTestConfig {
        DiffTestConfig {
            step_size: self.defense.step_size,
            iterations: self.defense.iterations,
            pca_dims: self.defense.pca_dims,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.dataset {
            DatasetConfig::Synthetic { classes, .. } => Some(*classes),
            DatasetConfig::File { .. } => None, // known after loading
        }
    }

    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match &self.dataset {
            DatasetConfig::Synthetic {
                train_samples: _,
                test_samples: _,
                classes,
                noise,
            } => Some(SyntheticSpec {
                n_samples: 0,
                num_classes: *classes,
                noise: *noise,
            }),
            DatasetConfig::File { .. } => None,
        }
    }

    /// Cross-field consistency checks that do not need the loaded dataset.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA {
            return Err(SimError::config(format!(
                "unsupported config schema {} (expected {CONFIG_SCHEMA})",
                self.schema_version
            )));
        }
        let n = self.federation.total_agents;
        if n == 0 {
            return Err(SimError::config("total_agents must be >= 1"));
        }
        let beta = self.federation.participation_ratio;
        if !beta.is_finite() || beta <= 0.0 || beta > 1.0 {
            return Err(SimError::config(format!(
                "participation_ratio must be in (0, 1], got {beta}"
            )));
        }
        let k = self.participants_per_round();
        if k == 0 || k > n {
            return Err(SimError::config(format!(
                "K = round(beta*N) = {k} outside [1, {n}]"
            )));
        }
        if self.federation.rounds == 0 {
            return Err(SimError::config("rounds must be >= 1"));
        }
        if !self.eta().is_finite() || self.eta() <= 0.0 {
            return Err(SimError::config("eta must be positive"));
        }
        if !self.federation.dirichlet_alpha.is_finite() || self.federation.dirichlet_alpha <= 0.0 {
            return Err(SimError::config("dirichlet_alpha must be positive"));
        }
        if let Some(&bad) = self.federation.adversaries.iter().find(|&&id| id >= n) {
            return Err(SimError::config(format!(
                "adversary id {bad} out of range [0, {n})"
            )));
        }
        if !self.federation.adversaries.is_empty() && self.attack.is_none() {
            return Err(SimError::config(
                "adversaries configured but the [attack] section is missing",
            ));
        }
        self.training.validate()?;

        let (channels, height, width) = ModelArch::from(self.model.arch).input_shape();
        if let DatasetConfig::Synthetic {
            classes,
            train_samples,
            test_samples,
            noise,
        } = &self.dataset
        {
            if *train_samples == 0 || *test_samples == 0 {
                return Err(SimError::config("synthetic dataset sizes must be >= 1"));
            }
            if *classes < 2 {
                return Err(SimError::config("synthetic dataset needs >= 2 classes"));
            }
            if *noise < 0.0 {
                return Err(SimError::config("synthetic noise must be non-negative"));
            }
            if (channels, height, width) != (1, 28, 28) {
                return Err(SimError::config(
                    "the synthetic dataset is 28x28 grayscale; pick a matching model",
                ));
            }
            if self.defense.validation_seed_classes > *classes {
                return Err(SimError::config(format!(
                    "validation_seed_classes {} exceeds class count {classes}",
                    self.defense.validation_seed_classes
                )));
            }
            if self.defense.aggregation == AggregationMethod::Defense
                && self.defense.pca_dims > k.min(*classes)
            {
                return Err(SimError::config(format!(
                    "pca_dims {} must be <= min(K={k}, classes={classes})",
                    self.defense.pca_dims
                )));
            }
        }

        if let Some(attack) = &self.attack {
            if !(0.0..=1.0).contains(&attack.alpha) {
                return Err(SimError::config("attack alpha must be in [0, 1]"));
            }
            if let Some(gamma) = attack.scaling_gamma {
                if !gamma.is_finite() || gamma <= 0.0 {
                    return Err(SimError::config("scaling_gamma must be positive"));
                }
            }
            attack
                .backdoor
                .validate(self.training.batch_size, height, width)?;
            if attack.backdoor.kind == BackdoorKind::Semantic
                && attack.backdoor.semantic_sample_ids.is_empty()
            {
                return Err(SimError::config("semantic attack needs carrier sample ids"));
            }
        }

        if self.defense.aggregation == AggregationMethod::Defense {
            if !self.defense.cutoff.is_finite() || self.defense.cutoff <= 0.0 {
                return Err(SimError::config("detection cutoff must be positive"));
            }
            if !self.defense.step_size.is_finite()
                || self.defense.step_size <= 0.0
                || self.defense.iterations == 0
            {
                return Err(SimError::config(
                    "differential testing needs step_size > 0, iterations >= 1",
                ));
            }
            if self.defense.validation_seed_count < self.defense.validation_seed_classes
                || self.defense.validation_seed_classes == 0
            {
                return Err(SimError::config(
                    "validation seeds: count must be >= classes >= 1",
                ));
            }
            if k < 2 {
                return Err(SimError::config("the defense needs K >= 2 participants"));
            }
        }

        if self.defense.aggregation == AggregationMethod::MultiKrum {
            let b = self.federation.adversaries.len().min(k);
            if k < 2 * b + 3 {
                return Err(SimError::config(format!(
                    "Multi-Krum requires K >= 2b + 3; K={k}, worst-case b={b}"
                )));
            }
        }

        if let Some(theta) = self.run.convergence_threshold {
            if !(0.0..=1.0).contains(&theta) {
                return Err(SimError::config("convergence_threshold must be in [0, 1]"));
            }
        }
        if self.run.ba_from_round >= self.federation.rounds {
            return Err(SimError::config(format!(
                "ba_from_round {} is past the last round {}",
                self.run.ba_from_round,
                self.federation.rounds - 1
            )));
        }
        Ok(())
    }
}

/// A documented example configuration, also used by the CLI's
/// `example-config` subcommand.
pub fn example_config_toml() -> &'static str {
    r#"# Experiment configuration.
schema_version = 1

[dataset]
# "synthetic" generates 28x28 grayscale block-pattern data; "file" loads the
# documented binary layout via train_path/test_path.
kind = "synthetic"
train_samples = 2000
test_samples = 800
classes = 10
noise = 0.12

[federation]
total_agents = 20
participation_ratio = 0.25   # K = round(beta * N) agents per round
rounds = 30
dirichlet_alpha = 0.9        # non-iid data split
adversaries = [0]            # agent ids under attacker control
# eta = 4.0                  # global learning rate; default 1/participation_ratio

[model]
arch = "small_cnn"           # or "tiny_resnet" (32x32x3 file datasets)

[training]
local_epochs = 3
learning_rate = 0.05
momentum = 0.9
weight_decay = 0.0005
batch_size = 64

[attack]
alpha = 0.7                  # classification-vs-stealth blend
# scaling_gamma = 5.0        # default N / eta

[attack.backdoor]
kind = "pixel_pattern"       # or "semantic"
target_class = 7
trigger_size = 4
poison_per_batch = 20
noise_sigma = 0.01
# semantic kind additionally needs:
# semantic_sample_ids = [ ... ]
# semantic_train_test_split = [48, 15]

[defense]
aggregation = "defense"      # fedavg | multikrum | coomed | defense
detector = "two_step_mad"    # single_mad | double_mad
cutoff = 3.0
step_size = 0.5
iterations = 20
pca_dims = 2
validation_seed_count = 20
validation_seed_classes = 10

[run]
master_seed = 42
# convergence_threshold = 0.80
ba_from_round = 0
"#
}
