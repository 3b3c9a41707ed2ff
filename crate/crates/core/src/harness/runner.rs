//! End-to-end experiment orchestration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    build_backdoor_testset, dirichlet_partition, read_dataset, sample_validation_seeds,
    synthetic_dataset, BackdoorKind, CarrierSets, SyntheticSpec,
};
use crate::error::{Result, SimError};
use crate::fl::{
    run_round, Agent, AgentRole, AggregationMethod, DefenseConfig, GlobalState, RoundContext,
    RoundRecord,
};
use crate::harness::config::{DatasetConfig, ExperimentConfig};
use crate::harness::metrics::{
    compute_detection_rates, max_ba_after_convergence, MaxBaAfterConvergence,
};
use crate::harness::persist;
use crate::image::LabeledDataset;
use crate::nn::arch::ModelArch;
use crate::rng;
use crate::train::AttackConfig;

pub const SUMMARY_SCHEMA: u32 = 1;

/// Aggregated outcome of a run; derivable from the per-round records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub schema: u32,
    pub rounds: usize,
    pub aggregation_method: AggregationMethod,
    pub final_global_accuracy: f64,
    pub mean_backdoor_accuracy: f64,
    pub ba_from_round: usize,
    pub convergence_threshold: Option<f64>,
    pub max_ba_after_convergence: Option<MaxBaAfterConvergence>,
    pub mean_fpr: Option<f64>,
    pub mean_fnr: Option<f64>,
    /// Some round aborted; results cover the remaining rounds.
    pub partial: bool,
    pub global_accuracy_series: Vec<f64>,
    pub backdoor_accuracy_series: Vec<f64>,
}

/// Derives the summary from per-round records.
pub fn summarize(
    records: &[RoundRecord],
    method: AggregationMethod,
    ba_from_round: usize,
    convergence_threshold: Option<f64>,
) -> Result<MetricsSummary> {
    if records.is_empty() {
        return Err(SimError::EmptyInput("summary of an empty run"));
    }
    let ga: Vec<f64> = records.iter().map(|r| r.global_accuracy).collect();
    let ba: Vec<f64> = records.iter().map(|r| r.backdoor_accuracy).collect();
    let window = &ba[ba_from_round.min(ba.len() - 1)..];
    let mean_ba = window.iter().sum::<f64>() / window.len() as f64;
    let history: Vec<(f64, f64)> = ga.iter().copied().zip(ba.iter().copied()).collect();
    let max_ba = match convergence_threshold {
        Some(theta) => Some(max_ba_after_convergence(&history, theta)?),
        None => None,
    };
    let rates = compute_detection_rates(records);
    Ok(MetricsSummary {
        schema: SUMMARY_SCHEMA,
        rounds: records.len(),
        aggregation_method: method,
        final_global_accuracy: *ga.last().unwrap(),
        mean_backdoor_accuracy: mean_ba,
        ba_from_round,
        convergence_threshold,
        max_ba_after_convergence: max_ba,
        mean_fpr: rates.mean_fpr,
        mean_fnr: rates.mean_fnr,
        partial: records.iter().any(|r| r.error.is_some()),
        global_accuracy_series: ga,
        backdoor_accuracy_series: ba,
    })
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub summary: MetricsSummary,
    pub records: Vec<RoundRecord>,
}

fn load_datasets(config: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    match &config.dataset {
        DatasetConfig::Synthetic {
            train_samples,
            test_samples,
            classes,
            noise,
        } => {
            let train = synthetic_dataset(
                &SyntheticSpec {
                    n_samples: *train_samples,
                    num_classes: *classes,
                    noise: *noise,
                },
                rng::derive_seed(config.run.master_seed, "data-train", &[]),
            )?;
            let test = synthetic_dataset(
                &SyntheticSpec {
                    n_samples: *test_samples,
                    num_classes: *classes,
                    noise: *noise,
                },
                rng::derive_seed(config.run.master_seed, "data-test", &[]),
            )?;
            Ok((train, test))
        }
        DatasetConfig::File {
            train_path,
            test_path,
        } => {
            let train = read_dataset(train_path)?;
            let test = read_dataset(test_path)?;
            if train.num_classes != test.num_classes {
                return Err(SimError::config(format!(
                    "train has {} classes, test has {}",
                    train.num_classes, test.num_classes
                )));
            }
            Ok((train, test))
        }
    }
}

/// Runs every round of the configured experiment. When `out_dir` is given,
/// persists the per-round records (JSONL), the summary, and a config
/// snapshot there; the whole run is reproducible from (config, master seed).
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let master = config.run.master_seed;
    let (train, test) = load_datasets(config)?;

    let arch = ModelArch::from(config.model.arch);
    let expected_shape = arch.input_shape();
    let got_shape = (
        train.images.channels,
        train.images.height,
        train.images.width,
    );
    if got_shape != expected_shape {
        return Err(SimError::config(format!(
            "model expects input {expected_shape:?}, dataset is {got_shape:?}"
        )));
    }

    // Attack material.
    let attack_cfg: Option<AttackConfig> = config.attack.as_ref().map(|section| AttackConfig {
        alpha: section.alpha,
        backdoor: section.backdoor.clone(),
        scaling_gamma: config.scaling_gamma().expect("attack present"),
        colluders_selected: 1,
    });
    let carriers: Option<CarrierSets> = match &attack_cfg {
        Some(attack) if attack.backdoor.kind == BackdoorKind::Semantic => {
            Some(CarrierSets::from_spec(&attack.backdoor, &train)?)
        }
        _ => None,
    };

    // Semantic carriers are attacker-exclusive: benign shards are drawn from
    // the remaining training samples.
    let partition_parent = match &attack_cfg {
        Some(attack) if attack.backdoor.kind == BackdoorKind::Semantic => {
            let excluded: std::collections::BTreeSet<usize> = attack
                .backdoor
                .semantic_sample_ids
                .iter()
                .copied()
                .collect();
            let keep: Vec<usize> = (0..train.len()).filter(|i| !excluded.contains(i)).collect();
            train.select(&keep)
        }
        _ => train.clone(),
    };

    let plan = dirichlet_partition(
        &partition_parent,
        config.federation.total_agents,
        config.federation.dirichlet_alpha,
        rng::derive_seed(master, "partition", &[]),
    )?;
    let agents: Vec<Agent> = (0..config.federation.total_agents)
        .map(|id| Agent {
            id: crate::fl::AgentId(id),
            role: if config.federation.adversaries.contains(&id) {
                AgentRole::Adversary
            } else {
                AgentRole::Benign
            },
            shard: partition_parent.select(&plan.per_agent[id]),
        })
        .collect();

    let method = config.defense.aggregation;
    let validation_seeds = if method == AggregationMethod::Defense {
        Some(sample_validation_seeds(
            &test,
            config.defense.validation_seed_count,
            config.defense.validation_seed_classes,
            rng::derive_seed(master, "validation-seeds", &[]),
        )?)
    } else {
        None
    };

    let backdoor_test = match &attack_cfg {
        Some(attack) => {
            let source = match attack.backdoor.kind {
                BackdoorKind::PixelPattern => {
                    // Images already of the target class cannot witness a
                    // misclassification; leave them out of the backdoor set.
                    let keep: Vec<usize> = (0..test.len())
                        .filter(|&i| test.labels[i] != attack.backdoor.target_class)
                        .collect();
                    test.select(&keep)
                }
                BackdoorKind::Semantic => test.clone(), // source unused
            };
            Some(build_backdoor_testset(
                &attack.backdoor,
                &source,
                carriers.as_ref(),
                rng::derive_seed(master, "backdoor-test", &[]),
            )?)
        }
        None => None,
    };

    let mut template = arch.build(train.num_classes)?;
    template.init_he(&mut rng::stream(master, "model-init", &[]));
    let initial = crate::nn::DifferentiableClassifier::parameters(&template);

    let mut state = GlobalState::new(
        initial,
        config.federation.total_agents,
        config.federation.participation_ratio,
        config.federation.eta,
    )?;

    let defense = DefenseConfig {
        difftest: config.difftest_config(),
        detector: config.defense.detector,
        cutoff: config.defense.cutoff,
    };
    let ctx = RoundContext {
        model_template: &template,
        agents: &agents,
        hyper: &config.training,
        attack: attack_cfg.as_ref(),
        carriers: carriers.as_ref(),
        defense: &defense,
        validation_seeds: validation_seeds.as_ref(),
        clean_test: &test,
        backdoor_test: backdoor_test.as_ref(),
        master_seed: master,
    };

    let mut records = Vec::with_capacity(config.federation.rounds);
    let mut writer = match out_dir {
        Some(dir) => Some(persist::RecordWriter::create(dir)?),
        None => None,
    };
    for _ in 0..config.federation.rounds {
        let (next, record) = run_round(&state, &ctx, method);
        if let Some(w) = &mut writer {
            w.append(&record)?;
        }
        records.push(record);
        state = next;
    }

    let summary = summarize(
        &records,
        method,
        config.run.ba_from_round,
        config.run.convergence_threshold,
    )?;
    if let Some(dir) = out_dir {
        persist::write_summary(dir, &summary)?;
        persist::write_config_snapshot(dir, config)?;
    }
    Ok(ExperimentOutcome { summary, records })
}
