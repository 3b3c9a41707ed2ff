//! Dirichlet non-iid partitioning.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::error::{Result, SimError};
use crate::image::LabeledDataset;
use crate::rng;

use super::PartitionPlan;

/// Splits a dataset across `n_agents` by drawing, for every class, a
/// proportion vector from Dirichlet(alpha) and allocating that class's
/// samples by largest-remainder rounding. The resulting index lists are
/// pairwise disjoint and cover the dataset. Deterministic given the seed.
pub fn dirichlet_partition(
    dataset: &LabeledDataset,
    n_agents: usize,
    alpha: f64,
    rng_seed: u64,
) -> Result<PartitionPlan> {
    if n_agents < 1 {
        return Err(SimError::config("partition needs at least one agent"));
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(SimError::config(format!(
            "dirichlet alpha must be positive, got {alpha}"
        )));
    }
    if dataset.is_empty() {
        return Err(SimError::EmptyInput("cannot partition an empty dataset"));
    }

    let mut per_agent: Vec<Vec<usize>> = vec![Vec::new(); n_agents];
    let mut stream = rng::stream(rng_seed, "dirichlet-partition", &[]);
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| SimError::config(e.to_string()))?;

    for class in 0..dataset.num_classes {
        let mut indices = dataset.class_indices(class);
        if indices.is_empty() {
            continue;
        }
        indices.shuffle(&mut stream);

        // Dirichlet via normalized gamma draws.
        let mut weights: Vec<f64> = (0..n_agents).map(|_| gamma.sample(&mut stream)).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            // All draws underflowed to zero (tiny alpha); fall back to uniform.
            weights = vec![1.0 / n_agents as f64; n_agents];
        } else {
            for w in &mut weights {
                *w /= total;
            }
        }

        let counts = largest_remainder(&weights, indices.len());
        let mut cursor = 0;
        for (agent, &count) in counts.iter().enumerate() {
            per_agent[agent].extend_from_slice(&indices[cursor..cursor + count]);
            cursor += count;
        }
    }

    for list in &mut per_agent {
        list.sort_unstable();
    }
    Ok(PartitionPlan {
        per_agent,
        dirichlet_alpha: alpha,
    })
}

/// Integer allocation of `total` items proportional to `weights`, assigning
/// leftover units by descending fractional part (ties to lower index).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &agent in order.iter().take(total.saturating_sub(assigned)) {
        counts[agent] += 1;
    }
    // Guard against floor-sum overshoot from rounding; trim from the end.
    let mut excess = counts.iter().sum::<usize>().saturating_sub(total);
    for &agent in order.iter().rev() {
        if excess == 0 {
            break;
        }
        if counts[agent] > 0 {
            counts[agent] -= 1;
            excess -= 1;
        }
    }
    counts
}
