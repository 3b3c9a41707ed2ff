//! Byzantine-robust aggregation baselines: Multi-Krum and coordinate-wise
//! median.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::outlier::median;
use crate::params::ParamVector;

/// Multi-Krum parameters. Requires `K >= 2b + 3` participants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KrumConfig {
    /// Assumed number of adversaries b among the K participants.
    pub assumed_adversaries: usize,
    /// Number l of lowest-score updates averaged into the global step.
    pub selected_count: usize,
    /// Norm order for pairwise distances (default 2).
    pub norm_order: f64,
}

impl KrumConfig {
    /// Standard configuration: knows the adversary count and averages the
    /// `K - b` best updates.
    pub fn knowing_adversaries(b: usize, k: usize) -> Self {
        KrumConfig {
            assumed_adversaries: b,
            selected_count: k.saturating_sub(b),
            norm_order: 2.0,
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if k < 2 * self.assumed_adversaries + 3 {
            return Err(SimError::config(format!(
                "Multi-Krum requires K >= 2b + 3; got K={k}, b={}",
                self.assumed_adversaries
            )));
        }
        if self.selected_count == 0 || self.selected_count > k {
            return Err(SimError::config(format!(
                "Multi-Krum selected count l={} must satisfy 1 <= l <= K={k}",
                self.selected_count
            )));
        }
        if self.norm_order < 1.0 {
            return Err(SimError::config(format!(
                "norm order must be >= 1, got {}",
                self.norm_order
            )));
        }
        Ok(())
    }
}

fn p_norm_distance(a: &ParamVector, b: &ParamVector, p: f64) -> f64 {
    if p == 2.0 {
        a.sq_distance(b).expect("layouts checked by caller").sqrt()
    } else {
        let sum: f64 = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).abs().powf(p))
            .sum();
        sum.powf(1.0 / p)
    }
}

fn check_layouts(updates: &[ParamVector]) -> Result<()> {
    if let Some(first) = updates.first() {
        for u in &updates[1..] {
            if u.layout_id != first.layout_id || u.len() != first.len() {
                return Err(SimError::LayoutMismatch {
                    expected: first.layout_id.0.clone(),
                    got: u.layout_id.0.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Krum distance score per update: the summed p-norm distances to its
/// `K - b - 2` nearest other updates. The update itself is excluded from its
/// neighbor set; neighbor ties are broken by lower index.
pub fn krum_scores(updates: &[ParamVector], cfg: &KrumConfig) -> Result<Vec<f64>> {
    let k = updates.len();
    cfg.validate(k)?;
    check_layouts(updates)?;
    let neighbors = k - cfg.assumed_adversaries - 2;
    let mut scores = Vec::with_capacity(k);
    for i in 0..k {
        let mut dists: Vec<(f64, usize)> = (0..k)
            .filter(|&j| j != i)
            .map(|j| (p_norm_distance(&updates[i], &updates[j], cfg.norm_order), j))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scores.push(dists.iter().take(neighbors).map(|(d, _)| d).sum());
    }
    Ok(scores)
}

/// Multi-Krum update: average of the `l` lowest-score updates added to the
/// global parameters. Score ties at the boundary are broken by lower index.
pub fn multi_krum_aggregate(
    global: &ParamVector,
    updates: &[ParamVector],
    cfg: &KrumConfig,
) -> Result<ParamVector> {
    let scores = krum_scores(updates, cfg)?;
    if updates[0].layout_id != global.layout_id {
        return Err(SimError::LayoutMismatch {
            expected: global.layout_id.0.clone(),
            got: updates[0].layout_id.0.clone(),
        });
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(cfg.selected_count).collect();
    chosen.sort_unstable();
    let mut result = global.clone();
    let weight = 1.0 / cfg.selected_count as f64;
    let mut mean = updates[0].zeros_like();
    for &i in &chosen {
        mean.add_scaled(&updates[i], weight)?;
    }
    result.add_scaled(&mean, 1.0)?;
    Ok(result)
}

/// Coordinate-wise median update: `G + median_i(delta_i(j))` per coordinate.
pub fn coomed_aggregate(global: &ParamVector, updates: &[ParamVector]) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(SimError::EmptyInput("coordinate-wise median of no updates"));
    }
    check_layouts(updates)?;
    if updates[0].layout_id != global.layout_id || updates[0].len() != global.len() {
        return Err(SimError::LayoutMismatch {
            expected: global.layout_id.0.clone(),
            got: updates[0].layout_id.0.clone(),
        });
    }
    let dim = global.len();
    let mut step = vec![0.0; dim];
    let mut column = Vec::with_capacity(updates.len());
    for (j, slot) in step.iter_mut().enumerate() {
        column.clear();
        column.extend(updates.iter().map(|u| u.values[j]));
        *slot = median(&column);
    }
    let mut result = global.clone();
    for (g, s) in result.values.iter_mut().zip(&step) {
        *g += s;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::LayoutId;
    use rand::RngExt;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec(), LayoutId::new("t"))
    }

    fn scalar_updates(vals: &[f64]) -> Vec<ParamVector> {
        vals.iter().map(|&v| pv(&[v])).collect()
    }

    #[test]
    fn krum_scores_hand_example() {
        let updates = scalar_updates(&[0.0, 0.1, -0.1, 0.05, 10.0]);
        let cfg = KrumConfig::knowing_adversaries(1, 5);
        let scores = krum_scores(&updates, &cfg).unwrap();
        assert!((scores[0] - 0.15).abs() < 1e-12);
        assert!((scores[4] - 19.85).abs() < 1e-12);
    }

    #[test]
    fn krum_identical_updates_score_zero() {
        let updates = scalar_updates(&[0.5; 6]);
        let cfg = KrumConfig::knowing_adversaries(1, 6);
        let scores = krum_scores(&updates, &cfg).unwrap();
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn krum_scores_translation_invariant() {
        let vals = [0.0, 0.1, -0.1, 0.05, 10.0];
        let shifted: Vec<f64> = vals.iter().map(|v| v + 7.25).collect();
        let cfg = KrumConfig::knowing_adversaries(1, 5);
        let a = krum_scores(&scalar_updates(&vals), &cfg).unwrap();
        let b = krum_scores(&scalar_updates(&shifted), &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_krum_hand_example() {
        let updates = scalar_updates(&[0.0, 0.1, -0.1, 0.05, 10.0]);
        let cfg = KrumConfig {
            assumed_adversaries: 1,
            selected_count: 4,
            norm_order: 2.0,
        };
        let out = multi_krum_aggregate(&pv(&[0.0]), &updates, &cfg).unwrap();
        assert!((out.values[0] - 0.0125).abs() < 1e-12);
    }

    #[test]
    fn multi_krum_full_selection_is_participant_mean() {
        let updates = scalar_updates(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let cfg = KrumConfig {
            assumed_adversaries: 1,
            selected_count: 5,
            norm_order: 2.0,
        };
        let out = multi_krum_aggregate(&pv(&[10.0]), &updates, &cfg).unwrap();
        assert!((out.values[0] - 13.0).abs() < 1e-12);
    }

    #[test]
    fn multi_krum_excludes_planted_outliers() {
        let mut rng = crate::rng::stream(5, "krum-prop", &[0]);
        for trial in 0..50u64 {
            let k = rng.random_range(5..12usize);
            let b = ((k - 3) / 2).clamp(1, 2);
            let dim = rng.random_range(1..6usize);
            let mut updates: Vec<ParamVector> = (0..k - b)
                .map(|_| {
                    pv(&(0..dim)
                        .map(|_| rng.random_range(-0.1..0.1))
                        .collect::<Vec<_>>())
                })
                .collect();
            // Planted outliers at >= 10x the benign spread.
            for _ in 0..b {
                updates.push(pv(&(0..dim)
                    .map(|_| rng.random_range(5.0..10.0))
                    .collect::<Vec<_>>()));
            }
            let cfg = KrumConfig::knowing_adversaries(b, k);
            let scores = krum_scores(&updates, &cfg).unwrap();
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &c| scores[a].total_cmp(&scores[c]).then(a.cmp(&c)));
            let selected: Vec<usize> = order.into_iter().take(cfg.selected_count).collect();
            for i in (k - b)..k {
                assert!(
                    !selected.contains(&i),
                    "trial {trial}: planted outlier {i} selected (scores {scores:?})"
                );
            }
        }
    }

    #[test]
    fn krum_constraint_enforced() {
        let updates = scalar_updates(&[0.0, 1.0, 2.0, 3.0]);
        let cfg = KrumConfig::knowing_adversaries(1, 4);
        assert!(matches!(
            krum_scores(&updates, &cfg),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn coomed_hand_example() {
        let updates = vec![pv(&[1.0, 4.0]), pv(&[2.0, 5.0]), pv(&[9.0, 0.0])];
        let out = coomed_aggregate(&pv(&[0.0, 0.0]), &updates).unwrap();
        assert_eq!(out.values, vec![2.0, 4.0]);
    }

    #[test]
    fn coomed_single_update_passthrough() {
        let out = coomed_aggregate(&pv(&[1.0]), &[pv(&[0.5])]).unwrap();
        assert_eq!(out.values, vec![1.5]);
    }

    #[test]
    fn coomed_within_coordinate_envelope() {
        let mut rng = crate::rng::stream(6, "coomed-prop", &[0]);
        for _ in 0..100 {
            let k = rng.random_range(1..9usize);
            let dim = rng.random_range(1..7usize);
            let updates: Vec<ParamVector> = (0..k)
                .map(|_| {
                    pv(&(0..dim)
                        .map(|_| rng.random_range(-5.0..5.0))
                        .collect::<Vec<_>>())
                })
                .collect();
            let out = coomed_aggregate(&pv(&vec![0.0; dim]), &updates).unwrap();
            for j in 0..dim {
                let lo = updates
                    .iter()
                    .map(|u| u.values[j])
                    .fold(f64::INFINITY, f64::min);
                let hi = updates
                    .iter()
                    .map(|u| u.values[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(out.values[j] >= lo && out.values[j] <= hi);
            }
        }
    }

    #[test]
    fn coomed_empty_rejected() {
        assert!(coomed_aggregate(&pv(&[0.0]), &[]).is_err());
    }
}
