//! Two-cluster k-means (Lloyd's algorithm) with deterministic initialization.

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng;

/// Result of splitting K points into a majority and a minority cluster.
/// Member lists hold positions into the input slice, ascending.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterResult {
    pub majority: Vec<usize>,
    pub minority: Vec<usize>,
    /// Majority center.
    pub mu1: Vec<f64>,
    /// Minority center (equals `mu1` when degenerate).
    pub mu2: Vec<f64>,
    /// Per-dimension population standard deviation of the majority cluster.
    pub majority_std: Vec<f64>,
    /// No separation: the minority is empty or the centers coincide.
    pub degenerate: bool,
}

impl ClusterResult {
    pub fn center_distance(&self) -> f64 {
        self.mu1
            .iter()
            .zip(&self.mu2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn majority_std_norm(&self) -> f64 {
        self.majority_std.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_of(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let dim = points[0].len();
    let mut mu = vec![0.0; dim];
    for &m in members {
        for (slot, v) in mu.iter_mut().zip(&points[m]) {
            *slot += v;
        }
    }
    for slot in &mut mu {
        *slot /= members.len() as f64;
    }
    mu
}

fn sse_of(points: &[Vec<f64>], members: &[usize], center: &[f64]) -> f64 {
    members.iter().map(|&m| sq_dist(&points[m], center)).sum()
}

fn population_std(points: &[Vec<f64>], members: &[usize], center: &[f64]) -> Vec<f64> {
    let dim = center.len();
    let mut var = vec![0.0; dim];
    for &m in members {
        for (slot, (v, c)) in var.iter_mut().zip(points[m].iter().zip(center)) {
            *slot += (v - c) * (v - c);
        }
    }
    var.iter()
        .map(|v| (v / members.len() as f64).sqrt())
        .collect()
}

/// Lloyd's algorithm with k = 2, run to an assignment fixed point (or 100
/// iterations). Initial centers are the two mutually farthest points; exact
/// ties among farthest pairs are broken by a seeded uniform draw. The larger
/// cluster is the majority; an exact size tie makes the tighter cluster
/// (smaller within-cluster SSE) the majority.
pub fn cluster_two(points: &[Vec<f64>], rng_seed: u64) -> Result<ClusterResult> {
    let k = points.len();
    if k < 2 {
        return Err(SimError::config("clustering needs at least 2 points"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(SimError::ShapeMismatch(
            "ragged points in clustering input".into(),
        ));
    }

    // Farthest pair.
    let mut best = 0.0f64;
    let mut ties: Vec<(usize, usize)> = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            let d = sq_dist(&points[i], &points[j]);
            if d > best {
                best = d;
                ties.clear();
                ties.push((i, j));
            } else if d == best {
                ties.push((i, j));
            }
        }
    }

    if best == 0.0 {
        // All points identical: no separation at all.
        let members: Vec<usize> = (0..k).collect();
        let mu = points[0].clone();
        return Ok(ClusterResult {
            majority: members,
            minority: vec![],
            mu1: mu.clone(),
            mu2: mu,
            majority_std: vec![0.0; dim],
            degenerate: true,
        });
    }

    let (seed_a, seed_b) = if ties.len() == 1 {
        ties[0]
    } else {
        let mut rng = rng::stream(rng_seed, "kmeans-init", &[]);
        ties[rng.random_range(0..ties.len())]
    };

    let mut centers = [points[seed_a].clone(), points[seed_b].clone()];
    let mut assignment = vec![0usize; k];
    for _ in 0..100 {
        let mut changed = false;
        for (i, point) in points.iter().enumerate() {
            let pick = usize::from(sq_dist(point, &centers[1]) < sq_dist(point, &centers[0]));
            if assignment[i] != pick {
                assignment[i] = pick;
                changed = true;
            }
        }
        for (cluster, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..k).filter(|&i| assignment[i] == cluster).collect();
            if !members.is_empty() {
                *center = mean_of(points, &members);
            }
        }
        if !changed {
            break;
        }
    }

    let group0: Vec<usize> = (0..k).filter(|&i| assignment[i] == 0).collect();
    let group1: Vec<usize> = (0..k).filter(|&i| assignment[i] == 1).collect();

    let (majority, minority) = match group0.len().cmp(&group1.len()) {
        std::cmp::Ordering::Greater => (group0, group1),
        std::cmp::Ordering::Less => (group1, group0),
        std::cmp::Ordering::Equal => {
            let sse0 = sse_of(points, &group0, &centers[0]);
            let sse1 = sse_of(points, &group1, &centers[1]);
            if sse0 <= sse1 {
                (group0, group1)
            } else {
                (group1, group0)
            }
        }
    };

    let mu1 = mean_of(points, &majority);
    let (mu2, degenerate) = if minority.is_empty() {
        (mu1.clone(), true)
    } else {
        let mu2 = mean_of(points, &minority);
        let degenerate = mu1 == mu2;
        (mu2, degenerate)
    };
    let majority_std = population_std(points, &majority, &mu1);

    Ok(ClusterResult {
        majority,
        minority,
        mu1,
        mu2,
        majority_std,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force optimal 2-partition by within-cluster SSE.
    fn best_partition(points: &[Vec<f64>]) -> (Vec<usize>, Vec<usize>) {
        let k = points.len();
        let mut best_sse = f64::INFINITY;
        let mut best = (vec![], vec![]);
        // Point 0 pinned to side A to halve the enumeration.
        for mask in 0..(1u32 << (k - 1)) {
            let mut a = vec![0usize];
            let mut b = vec![];
            for i in 1..k {
                if mask & (1 << (i - 1)) == 0 {
                    a.push(i);
                } else {
                    b.push(i);
                }
            }
            if b.is_empty() {
                continue;
            }
            let ca = mean_of(points, &a);
            let cb = mean_of(points, &b);
            let sse = sse_of(points, &a, &ca) + sse_of(points, &b, &cb);
            if sse < best_sse {
                best_sse = sse;
                best = (a, b);
            }
        }
        best
    }

    #[test]
    fn separates_the_far_point() {
        let points: Vec<Vec<f64>> = [0.0, 0.1, 0.2, 10.0].iter().map(|&v| vec![v]).collect();
        let result = cluster_two(&points, 1).unwrap();
        assert_eq!(result.majority, vec![0, 1, 2]);
        assert_eq!(result.minority, vec![3]);
        assert!((result.mu1[0] - 0.1).abs() < 1e-12);
        assert!((result.mu2[0] - 10.0).abs() < 1e-12);
        assert!(!result.degenerate);

        // Matches the optimal 2-partition.
        let (a, b) = best_partition(&points);
        let (opt_major, opt_minor) = if a.len() >= b.len() { (a, b) } else { (b, a) };
        assert_eq!(result.majority, opt_major);
        assert_eq!(result.minority, opt_minor);
    }

    #[test]
    fn matches_brute_force_on_separated_fixtures() {
        use rand::RngExt;
        for seed in 0..30u64 {
            let mut rng = crate::rng::stream(seed, "kmeans-fuzz", &[]);
            let k = rng.random_range(4..9usize);
            let minority = rng.random_range(1..=(k - 1) / 2);
            let dim = rng.random_range(1..4usize);
            let mut points: Vec<Vec<f64>> = (0..k - minority)
                .map(|_| (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect())
                .collect();
            for _ in 0..minority {
                points.push((0..dim).map(|_| rng.random_range(9.0..11.0)).collect());
            }
            let result = cluster_two(&points, seed).unwrap();
            let (a, b) = best_partition(&points);
            let (opt_major, opt_minor) = if a.len() >= b.len() { (a, b) } else { (b, a) };
            assert_eq!(result.majority, opt_major, "seed {seed}");
            assert_eq!(result.minority, opt_minor, "seed {seed}");
        }
    }

    #[test]
    fn identical_points_degenerate() {
        let points = vec![vec![0.5, 0.5]; 2];
        let result = cluster_two(&points, 3).unwrap();
        assert!(result.degenerate);
        assert!(result.minority.is_empty());
        assert_eq!(result.mu1, result.mu2);
    }

    #[test]
    fn size_tie_prefers_tighter_cluster() {
        // 5 tight points near 0, 5 loose points near 10.
        let mut points: Vec<Vec<f64>> = Vec::new();
        for i in 0..5 {
            points.push(vec![i as f64 * 0.001]);
        }
        for i in 0..5 {
            points.push(vec![10.0 + i as f64 * 0.4]);
        }
        let result = cluster_two(&points, 4).unwrap();
        assert_eq!(result.majority, vec![0, 1, 2, 3, 4]);
        assert_eq!(result.minority, vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn partitions_every_point_exactly_once() {
        use rand::RngExt;
        for seed in 0..40u64 {
            let mut rng = crate::rng::stream(seed, "kmeans-partition", &[]);
            let k = rng.random_range(2..15usize);
            let dim = rng.random_range(1..4usize);
            let points: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let result = cluster_two(&points, seed).unwrap();
            let mut all: Vec<usize> = result
                .majority
                .iter()
                .chain(&result.minority)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..k).collect::<Vec<_>>());
            assert!(result.majority.len() >= result.minority.len());
        }
    }

    #[test]
    fn single_point_rejected() {
        assert!(cluster_two(&[vec![1.0]], 0).is_err());
    }
}
