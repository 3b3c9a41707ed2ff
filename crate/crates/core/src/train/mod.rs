//! Local training: benign SGD, the blended adversarial objective, and
//! adversary update scaling.

use serde::{Deserialize, Serialize};

use crate::data::{poison_batch, BackdoorSpec, CarrierSets};
use crate::error::{Result, SimError};
use crate::image::LabeledDataset;
use crate::nn::{DifferentiableClassifier, Network};
use crate::params::ParamVector;
use crate::rng::{self, SimRng};

use rand::seq::SliceRandom;

/// Local SGD hyper-parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingHyper {
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for TrainingHyper {
    fn default() -> Self {
        TrainingHyper {
            local_epochs: 3,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 64,
        }
    }
}

impl TrainingHyper {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(SimError::config("local_epochs and batch_size must be >= 1"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(SimError::config(format!(
                    "{name} must be a non-negative number"
                )));
            }
        }
        Ok(())
    }
}

/// Attacker configuration: the loss blend, the backdoor, and weight scaling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Blend between classification loss (alpha) and the anomaly-evasion
    /// anchor toward the prior global parameters (1 - alpha).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub backdoor: BackdoorSpec,
    /// Weight-scaling factor gamma; colluders split it evenly.
    pub scaling_gamma: f64,
    /// Default colluder count when not driven by the round orchestrator,
    /// which overrides it with the number of adversaries actually selected.
    #[serde(default = "default_colluders")]
    pub colluders_selected: usize,
}

fn default_alpha() -> f64 {
    0.7
}

fn default_colluders() -> usize {
    1
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SimError::config(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !self.scaling_gamma.is_finite() || self.scaling_gamma <= 0.0 {
            return Err(SimError::config("scaling_gamma must be positive"));
        }
        if self.colluders_selected == 0 {
            return Err(SimError::config("colluders_selected must be >= 1"));
        }
        Ok(())
    }
}

/// Per-batch transformation applied before the gradient step.
enum BatchPrep<'a> {
    Clean,
    Poison {
        spec: &'a BackdoorSpec,
        carriers: Option<&'a CarrierSets>,
    },
}

/// Extra term added to the classification gradient.
struct Objective<'a> {
    ce_scale: f64,
    /// `(prior, weight)`: adds `weight * 2 (w - prior)`, the gradient of the
    /// squared-L2 anchor. Skipped entirely when `weight == 0` so the
    /// computation is bit-identical to plain training.
    anchor: Option<(&'a ParamVector, f64)>,
}

fn run_sgd(
    global_model: &Network,
    data: &LabeledDataset,
    hyper: &TrainingHyper,
    rng: &mut SimRng,
    prep: BatchPrep<'_>,
    objective: Objective<'_>,
) -> Result<ParamVector> {
    hyper.validate()?;
    let start = global_model.parameters();
    if data.is_empty() {
        // Nothing to train on: a zero update leaves the global model alone.
        return Ok(start.zeros_like());
    }
    let mut model = global_model.clone();
    let mut velocity = vec![0.0; start.len()];
    let mut indices: Vec<usize> = (0..data.len()).collect();

    for _ in 0..hyper.local_epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(hyper.batch_size) {
            let images = data.images.select(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (images, labels) = match &prep {
                BatchPrep::Clean => (images, labels),
                BatchPrep::Poison { spec, carriers } => {
                    let per_batch = spec.poison_per_batch.min(images.n);
                    if per_batch < spec.poison_per_batch {
                        let mut reduced = (*spec).clone();
                        reduced.poison_per_batch = per_batch;
                        poison_batch(&images, &labels, &reduced, *carriers, rng)?
                    } else {
                        poison_batch(&images, &labels, spec, *carriers, rng)?
                    }
                }
            };
            let (_, grad) = model.ce_loss_and_grad(&images, &labels);
            let params = model.parameters();
            let mut step: Vec<f64> = grad.values.iter().map(|g| objective.ce_scale * g).collect();
            if let Some((prior, weight)) = objective.anchor {
                for (s, (w, p)) in step.iter_mut().zip(params.values.iter().zip(&prior.values)) {
                    *s += weight * 2.0 * (w - p);
                }
            }
            let mut next = params;
            for ((v, s), w) in velocity.iter_mut().zip(&step).zip(&mut next.values) {
                *v = hyper.momentum * *v + s + hyper.weight_decay * *w;
                *w -= hyper.learning_rate * *v;
            }
            model.set_parameters(&next)?;
        }
    }
    model.parameters().sub(&start)
}

/// Benign local training: SGD with momentum and weight decay over shuffled
/// local data for `local_epochs`. Returns the weight update `L_i - G^t`.
/// An empty local dataset yields a zero update.
pub fn train_benign(
    global_model: &Network,
    data: &LabeledDataset,
    hyper: &TrainingHyper,
    rng_seed: u64,
) -> Result<ParamVector> {
    let mut rng = rng::stream(rng_seed, "local-train", &[]);
    run_sgd(
        global_model,
        data,
        hyper,
        &mut rng,
        BatchPrep::Clean,
        Objective {
            ce_scale: 1.0,
            anchor: None,
        },
    )
}

/// Adversarial local training: every batch is poisoned, and the per-step
/// gradient blends the cross-entropy over the mixed clean+backdoor batch
/// (weight alpha) with the squared-L2 anchor toward the prior global
/// parameters (weight 1 - alpha). Returns `L_adv - G^t`, unscaled.
pub fn train_adversarial(
    global_model: &Network,
    data: &LabeledDataset,
    attack: &AttackConfig,
    carriers: Option<&CarrierSets>,
    prior_global: &ParamVector,
    hyper: &TrainingHyper,
    rng_seed: u64,
) -> Result<ParamVector> {
    attack.validate()?;
    let mut rng = rng::stream(rng_seed, "local-train", &[]);
    let anchor_weight = 1.0 - attack.alpha;
    run_sgd(
        global_model,
        data,
        hyper,
        &mut rng,
        BatchPrep::Poison {
            spec: &attack.backdoor,
            carriers,
        },
        Objective {
            ce_scale: attack.alpha,
            anchor: (anchor_weight != 0.0).then_some((prior_global, anchor_weight)),
        },
    )
}

/// Weight scaling with even collusion split: `(gamma / b) * update`.
pub fn scale_update(update: &ParamVector, gamma: f64, b: usize) -> Result<ParamVector> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(SimError::config(format!(
            "scaling gamma must be positive, got {gamma}"
        )));
    }
    if b == 0 {
        return Err(SimError::config("colluder count b must be >= 1"));
    }
    Ok(update.scale(gamma / b as f64))
}
