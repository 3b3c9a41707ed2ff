//! FL core: global state, agent selection, aggregation rules, and the round
//! orchestration loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CarrierSets;
use crate::difftest::{
    generate_diff_inputs_and_scores, ClassProjection, DiffTestConfig, ScoreMatrix,
};
use crate::error::{Result, SimError};
use crate::harness::metrics::{compute_backdoor_accuracy, compute_global_accuracy};
use crate::image::LabeledDataset;
use crate::nn::{DifferentiableClassifier, Network};
use crate::outlier::{detect, DetectionReport, MadVariant};
use crate::params::ParamVector;
use crate::rng;
use crate::robust::{coomed_aggregate, multi_krum_aggregate, KrumConfig};
use crate::train::{scale_update, train_adversarial, train_benign, AttackConfig, TrainingHyper};

/// Identifier of a local agent, stable across a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub usize);

impl std::fmt::Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Benign,
    Adversary,
}

/// A local agent: identity, role, and its private data shard.
#[derive(Debug, Clone)]
pub struct Agent {
    pub id: AgentId,
    pub role: AgentRole,
    pub shard: LabeledDataset,
}

/// Server-side global state.
#[derive(Debug, Clone)]
pub struct GlobalState {
    pub round_index: usize,
    pub global_params: ParamVector,
    /// Global learning rate eta (default 1/beta).
    pub eta: f64,
    /// Total agent count N.
    pub total_agents: usize,
    /// Participation ratio beta in (0, 1].
    pub participation_ratio: f64,
}

impl GlobalState {
    pub fn new(
        global_params: ParamVector,
        total_agents: usize,
        participation_ratio: f64,
        eta: Option<f64>,
    ) -> Result<GlobalState> {
        if total_agents == 0 {
            return Err(SimError::config("total_agents must be >= 1"));
        }
        if !participation_ratio.is_finite()
            || participation_ratio <= 0.0
            || participation_ratio > 1.0
        {
            return Err(SimError::config(format!(
                "participation ratio must be in (0, 1], got {participation_ratio}"
            )));
        }
        let eta = eta.unwrap_or(1.0 / participation_ratio);
        if !eta.is_finite() || eta <= 0.0 {
            return Err(SimError::config("eta must be positive"));
        }
        let state = GlobalState {
            round_index: 0,
            global_params,
            eta,
            total_agents,
            participation_ratio,
        };
        let k = state.participants_per_round();
        if k == 0 || k > total_agents {
            return Err(SimError::config(format!(
                "K = round(beta * N) = {k} outside [1, N={total_agents}]"
            )));
        }
        Ok(state)
    }

    /// K = round(beta * N), ties rounded half-up.
    pub fn participants_per_round(&self) -> usize {
        (self.participation_ratio * self.total_agents as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationMethod {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "multikrum")]
    MultiKrum,
    #[serde(rename = "coomed")]
    Coomed,
    #[serde(rename = "defense")]
    Defense,
}

impl std::fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AggregationMethod::FedAvg => write!(f, "fedavg"),
            AggregationMethod::MultiKrum => write!(f, "multikrum"),
            AggregationMethod::Coomed => write!(f, "coomed"),
            AggregationMethod::Defense => write!(f, "defense"),
        }
    }
}

/// Defense-stage intermediates kept in the round record for audits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseRoundDetail {
    pub scores: ScoreMatrix,
    pub report: DetectionReport,
    pub projections: Vec<ClassProjection>,
}

/// Everything that happened in one global epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub schema: u32,
    pub round_index: usize,
    pub selected_agent_ids: Vec<AgentId>,
    pub adversary_ids_selected: Vec<AgentId>,
    pub flagged_outliers: Vec<AgentId>,
    pub aggregation_method: AggregationMethod,
    pub global_accuracy: f64,
    pub backdoor_accuracy: f64,
    /// All participants were flagged; the round left the global model alone.
    pub skipped: bool,
    /// Set when the round aborted; the global model is unchanged.
    pub error: Option<String>,
    pub notes: Vec<String>,
    pub defense: Option<DefenseRoundDetail>,
}

pub const RECORD_SCHEMA: u32 = 1;

/// Uniformly selects K distinct agent ids without replacement; deterministic
/// given `(rng_seed, state.round_index)`. Returned ascending.
pub fn select_agents(state: &GlobalState, rng_seed: u64) -> Result<Vec<AgentId>> {
    let k = state.participants_per_round();
    if k > state.total_agents {
        return Err(SimError::config(format!(
            "cannot select {k} of {} agents",
            state.total_agents
        )));
    }
    let mut rng = rng::stream(rng_seed, "select-agents", &[state.round_index as u64]);
    let mut ids: Vec<AgentId> = rand::seq::index::sample(&mut rng, state.total_agents, k)
        .into_iter()
        .map(AgentId)
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

fn check_update_layouts(global: &ParamVector, updates: &[ParamVector]) -> Result<()> {
    for u in updates {
        if u.layout_id != global.layout_id || u.len() != global.len() {
            return Err(SimError::LayoutMismatch {
                expected: global.layout_id.0.clone(),
                got: u.layout_id.0.clone(),
            });
        }
    }
    Ok(())
}

/// FedAvg: `G + (eta / N) * sum_i delta_i`. With the default `eta = 1/beta`
/// and `K = beta * N` participants this is the participant mean.
pub fn fedavg_aggregate(state: &GlobalState, updates: &[ParamVector]) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(SimError::EmptyInput("FedAvg over no updates"));
    }
    check_update_layouts(&state.global_params, updates)?;
    let scale = state.eta / state.total_agents as f64;
    let mut sum = state.global_params.zeros_like();
    for u in updates {
        sum.add_scaled(u, 1.0)?;
    }
    let mut out = state.global_params.clone();
    out.add_scaled(&sum, scale)?;
    Ok(out)
}

/// FedAvg restricted to inliers, with the averaging denominator equal to the
/// inlier count. Errors when every agent is flagged.
pub fn filtered_aggregate(
    state: &GlobalState,
    updates: &[(AgentId, ParamVector)],
    outliers: &[AgentId],
) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(SimError::EmptyInput("filtered aggregation over no updates"));
    }
    let inliers: Vec<&ParamVector> = updates
        .iter()
        .filter(|(id, _)| !outliers.contains(id))
        .map(|(_, u)| u)
        .collect();
    if inliers.is_empty() {
        return Err(SimError::NoInliers);
    }
    let weight = 1.0 / inliers.len() as f64;
    let mut mean = state.global_params.zeros_like();
    for u in &inliers {
        check_update_layouts(&state.global_params, std::slice::from_ref(u))?;
        mean.add_scaled(u, weight)?;
    }
    let mut out = state.global_params.clone();
    out.add_scaled(&mean, 1.0)?;
    Ok(out)
}

/// Defense stage configuration: differential testing plus the detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub difftest: DiffTestConfig,
    pub detector: MadVariant,
    pub cutoff: f64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig {
            difftest: DiffTestConfig::default(),
            detector: MadVariant::TwoStep,
            cutoff: 3.0,
        }
    }
}

/// Shared, read-only inputs of a round.
pub struct RoundContext<'a> {
    /// Architecture template; its parameters are overwritten per use.
    pub model_template: &'a Network,
    /// All N agents, indexed by id.
    pub agents: &'a [Agent],
    pub hyper: &'a TrainingHyper,
    /// `None` disables the attack; adversaries then train like benign agents.
    pub attack: Option<&'a AttackConfig>,
    pub carriers: Option<&'a CarrierSets>,
    pub defense: &'a DefenseConfig,
    /// The server's fixed validation seed images, reused every round.
    /// Required for the defense aggregation method.
    pub validation_seeds: Option<&'a LabeledDataset>,
    pub clean_test: &'a LabeledDataset,
    /// Absent when no attack is configured; backdoor accuracy then reads 0.
    pub backdoor_test: Option<&'a LabeledDataset>,
    pub master_seed: u64,
}

fn model_with_params(template: &Network, params: &ParamVector) -> Result<Network> {
    let mut net = template.clone();
    net.set_parameters(params)?;
    Ok(net)
}

/// Executes one global epoch: select, local-train (benign or adversarial per
/// role, in parallel), optionally run the defense, aggregate, and evaluate.
/// Any failure aborts the round with the global model unchanged and an
/// error-tagged record.
pub fn run_round(
    state: &GlobalState,
    ctx: &RoundContext<'_>,
    method: AggregationMethod,
) -> (GlobalState, RoundRecord) {
    let round = state.round_index;
    let mut record = RoundRecord {
        schema: RECORD_SCHEMA,
        round_index: round,
        selected_agent_ids: vec![],
        adversary_ids_selected: vec![],
        flagged_outliers: vec![],
        aggregation_method: method,
        global_accuracy: 0.0,
        backdoor_accuracy: 0.0,
        skipped: false,
        error: None,
        notes: vec![],
        defense: None,
    };

    let outcome = round_body(state, ctx, method, &mut record);
    let new_params = match outcome {
        Ok(params) => params,
        Err(err) => {
            record.error = Some(err.to_string());
            state.global_params.clone()
        }
    };

    // Evaluate whatever the round produced (the old model when aborted).
    match model_with_params(ctx.model_template, &new_params) {
        Ok(model) => {
            record.global_accuracy = compute_global_accuracy(&model, ctx.clean_test).unwrap_or(0.0);
            record.backdoor_accuracy = ctx
                .backdoor_test
                .map(|set| compute_backdoor_accuracy(&model, set).unwrap_or(0.0))
                .unwrap_or(0.0);
        }
        Err(err) => {
            if record.error.is_none() {
                record.error = Some(err.to_string());
            }
        }
    }

    let next = GlobalState {
        round_index: round + 1,
        global_params: new_params,
        eta: state.eta,
        total_agents: state.total_agents,
        participation_ratio: state.participation_ratio,
    };
    (next, record)
}

fn round_body(
    state: &GlobalState,
    ctx: &RoundContext<'_>,
    method: AggregationMethod,
    record: &mut RoundRecord,
) -> Result<ParamVector> {
    let round = state.round_index;
    let selected = select_agents(state, ctx.master_seed)?;
    record.selected_agent_ids = selected.clone();

    let roster: Vec<&Agent> = selected
        .iter()
        .map(|id| {
            ctx.agents
                .get(id.0)
                .filter(|a| a.id == *id)
                .ok_or_else(|| SimError::config(format!("agent {id} missing from roster")))
        })
        .collect::<Result<_>>()?;

    let adversaries: Vec<AgentId> = if ctx.attack.is_some() {
        roster
            .iter()
            .filter(|a| a.role == AgentRole::Adversary)
            .map(|a| a.id)
            .collect()
    } else {
        vec![]
    };
    record.adversary_ids_selected = adversaries.clone();
    let colluders = adversaries.len();

    for agent in &roster {
        if agent.shard.is_empty() {
            record.notes.push(format!(
                "agent {} has an empty shard; zero update",
                agent.id
            ));
        }
    }

    let global_model = model_with_params(ctx.model_template, &state.global_params)?;
    let updates: Vec<(AgentId, ParamVector)> = roster
        .par_iter()
        .map(|agent| {
            let seed = rng::derive_seed(
                ctx.master_seed,
                "agent-train",
                &[agent.id.0 as u64, round as u64],
            );
            let update = match (agent.role, ctx.attack) {
                (AgentRole::Adversary, Some(attack)) => {
                    let raw = train_adversarial(
                        &global_model,
                        &agent.shard,
                        attack,
                        ctx.carriers,
                        &state.global_params,
                        ctx.hyper,
                        seed,
                    )?;
                    scale_update(&raw, attack.scaling_gamma, colluders.max(1))?
                }
                _ => train_benign(&global_model, &agent.shard, ctx.hyper, seed)?,
            };
            Ok((agent.id, update))
        })
        .collect::<Result<_>>()?;

    match method {
        AggregationMethod::FedAvg => {
            let plain: Vec<ParamVector> = updates.iter().map(|(_, u)| u.clone()).collect();
            fedavg_aggregate(state, &plain)
        }
        AggregationMethod::Coomed => {
            let plain: Vec<ParamVector> = updates.iter().map(|(_, u)| u.clone()).collect();
            coomed_aggregate(&state.global_params, &plain)
        }
        AggregationMethod::MultiKrum => {
            let plain: Vec<ParamVector> = updates.iter().map(|(_, u)| u.clone()).collect();
            let cfg = KrumConfig::knowing_adversaries(colluders, plain.len());
            multi_krum_aggregate(&state.global_params, &plain, &cfg)
        }
        AggregationMethod::Defense => {
            // The server tests the models the submitted updates would install.
            let models: Vec<Network> = updates
                .iter()
                .map(|(_, u)| model_with_params(ctx.model_template, &state.global_params.add(u)?))
                .collect::<Result<_>>()?;
            let refs: Vec<&dyn DifferentiableClassifier> = models
                .iter()
                .map(|m| m as &dyn DifferentiableClassifier)
                .collect();
            let ids: Vec<AgentId> = updates.iter().map(|(id, _)| *id).collect();
            let seeds = ctx
                .validation_seeds
                .ok_or_else(|| SimError::config("defense aggregation without validation seeds"))?;
            let out = generate_diff_inputs_and_scores(
                seeds,
                &refs,
                &ids,
                &ctx.defense.difftest,
                rng::derive_seed(ctx.master_seed, "difftest-round", &[round as u64]),
            )?;
            let report = detect(ctx.defense.detector, &out.scores, ctx.defense.cutoff)?;
            record.flagged_outliers = report.outlier_ids.clone();
            record.defense = Some(DefenseRoundDetail {
                scores: out.scores.clone(),
                report: report.clone(),
                projections: out.projections,
            });
            if report.outlier_ids.len() == updates.len() {
                // Fail safe: a fully flagged sample skips the round.
                record.skipped = true;
                record
                    .notes
                    .push("all participants flagged; round skipped".into());
                return Ok(state.global_params.clone());
            }
            filtered_aggregate(state, &updates, &report.outlier_ids)
        }
    }
}
