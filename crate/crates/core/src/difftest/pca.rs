//! Principal component projection via one-sided Jacobi SVD on the centered
//! data matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// The fitted linear map: column means plus the top-d orthonormal components
/// (rows, feature-space), with their explained variances (population
/// convention, eigenvalues of `X_c^T X_c / K`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaMap {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaMap {
    pub fn dims(&self) -> usize {
        self.components.len()
    }

    /// Projects one row: `components * (row - mean)`.
    pub fn project_row(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|comp| {
                comp.iter()
                    .zip(row.iter().zip(&self.mean))
                    .map(|(c, (x, m))| c * (x - m))
                    .sum()
            })
            .collect()
    }

    pub fn project(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.project_row(r)).collect()
    }
}

/// Centers the rows and projects them onto the top-`d` right singular
/// vectors. The projection is non-expansive: pairwise distances never grow.
pub fn pca_project(rows: &[Vec<f64>], d: usize) -> Result<(Vec<Vec<f64>>, PcaMap)> {
    let k = rows.len();
    if k < 2 {
        return Err(SimError::config("PCA needs at least 2 rows"));
    }
    let c = rows[0].len();
    if rows.iter().any(|r| r.len() != c) {
        return Err(SimError::ShapeMismatch("ragged rows in PCA input".into()));
    }
    if d == 0 || d > k.min(c) {
        return Err(SimError::config(format!(
            "PCA dimension {d} must be in [1, min(K={k}, C={c})]"
        )));
    }

    let mean: Vec<f64> = (0..c)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / k as f64)
        .collect();

    // Column-major centered matrix: cols[j][i] = rows[i][j] - mean[j].
    let mut cols: Vec<Vec<f64>> = (0..c)
        .map(|j| rows.iter().map(|r| r[j] - mean[j]).collect())
        .collect();
    // Right singular vectors accumulate here, column-major as well.
    let mut v: Vec<Vec<f64>> = (0..c)
        .map(|j| (0..c).map(|i| f64::from(u8::from(i == j))).collect())
        .collect();

    one_sided_jacobi(&mut cols, &mut v);

    let mut order: Vec<usize> = (0..c).collect();
    let sq_norms: Vec<f64> = cols
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum())
        .collect();
    order.sort_by(|&a, &b| sq_norms[b].total_cmp(&sq_norms[a]).then(a.cmp(&b)));

    let components: Vec<Vec<f64>> = order.iter().take(d).map(|&j| v[j].clone()).collect();
    let explained_variance: Vec<f64> = order
        .iter()
        .take(d)
        .map(|&j| sq_norms[j] / k as f64)
        .collect();

    let map = PcaMap {
        mean,
        components,
        explained_variance,
    };
    let projected = map.project(rows);
    Ok((projected, map))
}

/// Hestenes one-sided Jacobi: repeatedly rotates column pairs of the data
/// matrix until all pairs are orthogonal, accumulating the rotations in `v`.
fn one_sided_jacobi(cols: &mut [Vec<f64>], v: &mut [Vec<f64>]) {
    let c = cols.len();
    const MAX_SWEEPS: usize = 60;
    const TOL: f64 = 1e-14;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..c {
            for j in (i + 1)..c {
                let a: f64 = cols[i].iter().map(|x| x * x).sum();
                let b: f64 = cols[j].iter().map(|x| x * x).sum();
                let g: f64 = cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
                if g.abs() <= TOL * (a * b).sqrt() || g == 0.0 {
                    continue;
                }
                rotated = true;
                let tau = (b - a) / (2.0 * g);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let cos = 1.0 / (1.0 + t * t).sqrt();
                let sin = t * cos;
                rotate_pair(cols, i, j, cos, sin);
                rotate_pair(v, i, j, cos, sin);
            }
        }
        if !rotated {
            break;
        }
    }
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize, cos: f64, sin: f64) {
    let (first, second) = cols.split_at_mut(j);
    let ci = &mut first[i];
    let cj = &mut second[0];
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let xi = *x;
        let yj = *y;
        *x = cos * xi - sin * yj;
        *y = sin * xi + cos * yj;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    fn pairwise_distances(rows: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                let d: f64 = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                out.push(d.sqrt());
            }
        }
        out
    }

    /// Cyclic Jacobi eigendecomposition of a symmetric matrix; test oracle
    /// independent of the one-sided SVD in the implementation.
    #[allow(clippy::needless_range_loop)]
    fn jacobi_eigenvalues(mut m: Vec<Vec<f64>>) -> Vec<f64> {
        let n = m.len();
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += m[i][j] * m[i][j];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if m[p][q].abs() < 1e-18 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[k][p];
                        let mkq = m[k][q];
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[p][k];
                        let mqk = m[q][k];
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        eig
    }

    fn random_rows(seed: u64, k: usize, c: usize) -> Vec<Vec<f64>> {
        let mut rng = crate::rng::stream(seed, "pca-test", &[]);
        (0..k)
            .map(|_| (0..c).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    #[test]
    fn planar_points_keep_distances_exactly() {
        // Points in a 2-d affine subspace of R^5.
        let mut rng = crate::rng::stream(1, "pca-test", &[]);
        let u: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                let a: f64 = rng.random_range(-3.0..3.0);
                let b: f64 = rng.random_range(-3.0..3.0);
                (0..5).map(|j| 0.7 + a * u[j] + b * w[j]).collect()
            })
            .collect();
        let (proj, _) = pca_project(&rows, 2).unwrap();
        let before = pairwise_distances(&rows);
        let after = pairwise_distances(&proj);
        for (x, y) in before.iter().zip(&after) {
            assert!((x - y).abs() < 1e-9, "distance {x} became {y}");
        }
    }

    #[test]
    fn full_rank_projection_preserves_distances() {
        let rows = random_rows(2, 8, 4);
        let (proj, _) = pca_project(&rows, 4).unwrap();
        let before = pairwise_distances(&rows);
        let after = pairwise_distances(&proj);
        for (x, y) in before.iter().zip(&after) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_is_non_expansive() {
        for seed in 0..30u64 {
            let mut rng = crate::rng::stream(seed, "pca-nonexp", &[]);
            let k = rng.random_range(3..12usize);
            let c = rng.random_range(2..9usize);
            let d = rng.random_range(1..=k.min(c));
            let rows = random_rows(seed + 100, k, c);
            let (proj, _) = pca_project(&rows, d).unwrap();
            let before = pairwise_distances(&rows);
            let after = pairwise_distances(&proj);
            for (x, y) in before.iter().zip(&after) {
                assert!(*y <= x + 1e-9, "projection expanded {x} to {y}");
            }
        }
    }

    #[test]
    fn explained_variance_matches_eigendecomposition_oracle() {
        for seed in 0..20u64 {
            let mut rng = crate::rng::stream(seed, "pca-ev", &[]);
            let k = rng.random_range(4..15usize);
            let c = rng.random_range(2..8usize);
            let rows = random_rows(seed + 500, k, c);
            let (_, map) = pca_project(&rows, 2.min(k.min(c))).unwrap();

            let mean: Vec<f64> = (0..c)
                .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / k as f64)
                .collect();
            let mut cov = vec![vec![0.0; c]; c];
            for r in &rows {
                for i in 0..c {
                    for j in 0..c {
                        cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / k as f64;
                    }
                }
            }
            let eig = jacobi_eigenvalues(cov);
            for (got, want) in map.explained_variance.iter().zip(&eig) {
                assert!((got - want).abs() < 1e-8, "variance {got} vs oracle {want}");
            }
        }
    }

    #[test]
    fn components_are_orthonormal() {
        let rows = random_rows(7, 10, 6);
        let (_, map) = pca_project(&rows, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = map.components[i]
                    .iter()
                    .zip(&map.components[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(pca_project(&[vec![1.0, 2.0]], 1).is_err());
        let rows = random_rows(9, 4, 3);
        assert!(pca_project(&rows, 0).is_err());
        assert!(pca_project(&rows, 4).is_err());
    }

    #[test]
    fn identical_rows_project_to_zero() {
        let rows = vec![vec![0.3, 0.4, 0.3]; 5];
        let (proj, _) = pca_project(&rows, 2).unwrap();
        for p in proj {
            assert!(p.iter().all(|&x| x.abs() < 1e-12));
        }
    }
}
