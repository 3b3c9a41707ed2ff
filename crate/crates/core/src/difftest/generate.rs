//! Differential input generation and per-agent score emission.
//!
//! Per class: t iterations of {predict, average, PCA, 2-means, gradient
//! ascent on the cluster-separation objective}. Scores come from the final
//! iteration's clustering: majority members receive twice the norm of the
//! majority cluster's per-dimension standard deviation, minority members the
//! distance between the cluster centers. A class with no separation scores
//! zero for every agent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fl::AgentId;
use crate::image::{ImageBatch, LabeledDataset};
use crate::nn::DifferentiableClassifier;
use crate::rng;

use super::{cluster_two, pca_project, ClusterResult, DiffTestConfig, PcaMap, ScoreMatrix};

/// One row per model: the model's softmax prediction averaged over the batch.
/// Every row sums to 1 up to rounding.
pub fn mean_softmax_predictions(
    models: &[&dyn DifferentiableClassifier],
    images: &ImageBatch,
) -> Result<Vec<Vec<f64>>> {
    if images.n == 0 {
        return Err(SimError::EmptyInput("mean prediction over an empty batch"));
    }
    if models.is_empty() {
        return Err(SimError::EmptyInput("mean prediction with no models"));
    }
    let inv = 1.0 / images.n as f64;
    Ok(models
        .iter()
        .map(|model| {
            let mut mean = vec![0.0; model.num_classes()];
            for probs in model.predict_probs(images) {
                for (slot, p) in mean.iter_mut().zip(&probs) {
                    *slot += p;
                }
            }
            for slot in &mut mean {
                *slot *= inv;
            }
            mean
        })
        .collect())
}

fn cluster_centers_from(
    preds: &[Vec<f64>],
    map: &PcaMap,
    clusters: &ClusterResult,
) -> (Vec<f64>, Vec<f64>) {
    let project_mean = |members: &[usize]| -> Vec<f64> {
        let mut mu = vec![0.0; map.dims()];
        for &m in members {
            for (slot, v) in mu.iter_mut().zip(map.project_row(&preds[m])) {
                *slot += v;
            }
        }
        for slot in &mut mu {
            *slot /= members.len() as f64;
        }
        mu
    };
    (
        project_mean(&clusters.majority),
        project_mean(&clusters.minority),
    )
}

/// The cluster-separation objective `||mu1 - mu2||` evaluated at `images`,
/// holding the PCA map and the cluster memberships fixed. Used by the ascent
/// step's oracles; recomputes predictions.
pub fn separation_objective(
    images: &ImageBatch,
    models: &[&dyn DifferentiableClassifier],
    map: &PcaMap,
    clusters: &ClusterResult,
) -> Result<f64> {
    if clusters.minority.is_empty() {
        return Ok(0.0);
    }
    let preds = mean_softmax_predictions(models, images)?;
    let (mu1, mu2) = cluster_centers_from(&preds, map, clusters);
    Ok(mu1
        .iter()
        .zip(&mu2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Analytic gradient of the separation objective w.r.t. the input pixels,
/// with the PCA map and cluster memberships held constant. `preds` are the
/// mean predictions already computed for `images` this iteration. `None`
/// when the centers coincide.
pub fn separation_gradient(
    images: &ImageBatch,
    models: &[&dyn DifferentiableClassifier],
    preds: &[Vec<f64>],
    map: &PcaMap,
    clusters: &ClusterResult,
) -> Result<Option<ImageBatch>> {
    let (mu1, mu2) = cluster_centers_from(preds, map, clusters);
    let diff: Vec<f64> = mu1.iter().zip(&mu2).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(None);
    }
    let unit: Vec<f64> = diff.iter().map(|v| v / norm).collect();

    // d obj / d p^i = sign_i * components^T u, with sign_i = +1/|G1| for the
    // majority and -1/|G2| for the minority.
    let coeff_for = |sign: f64| -> Vec<f64> {
        let c = map.mean.len();
        let mut coeff = vec![0.0; c];
        for (comp, u) in map.components.iter().zip(&unit) {
            for (slot, cv) in coeff.iter_mut().zip(comp) {
                *slot += sign * u * cv;
            }
        }
        coeff
    };
    let mut signs = vec![0.0; models.len()];
    for &m in &clusters.majority {
        signs[m] = 1.0 / clusters.majority.len() as f64;
    }
    for &m in &clusters.minority {
        signs[m] = -1.0 / clusters.minority.len() as f64;
    }

    let inv_batch = 1.0 / images.n as f64;
    let per_model: Vec<ImageBatch> = models
        .par_iter()
        .zip(signs.par_iter())
        .map(|(model, &sign)| model.input_gradient(images, &coeff_for(sign)))
        .collect();

    let mut grad = ImageBatch::zeros(images.n, images.channels, images.height, images.width);
    for g in per_model {
        for (slot, v) in grad.data.iter_mut().zip(&g.data) {
            *slot += v * inv_batch;
        }
    }
    Ok(Some(grad))
}

/// One gradient-ascent step on the batch: `clamp(X + s * d||mu1 - mu2||/dX)`.
/// Degenerate clusters return the batch unchanged.
pub fn differential_step(
    images: &ImageBatch,
    models: &[&dyn DifferentiableClassifier],
    preds: &[Vec<f64>],
    map: &PcaMap,
    clusters: &ClusterResult,
    step_size: f64,
) -> Result<ImageBatch> {
    if !step_size.is_finite() || step_size <= 0.0 {
        return Err(SimError::config("step size must be positive"));
    }
    if clusters.degenerate || clusters.minority.is_empty() {
        return Ok(images.clone());
    }
    match separation_gradient(images, models, preds, map, clusters)? {
        None => Ok(images.clone()),
        Some(grad) => {
            let mut next = images.clone();
            for (x, g) in next.data.iter_mut().zip(&grad.data) {
                *x = (*x + step_size * g).clamp(0.0, 1.0);
            }
            Ok(next)
        }
    }
}

/// Final per-class PCA projection with cluster memberships, kept for audit
/// logs and scatter plots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassProjection {
    pub class_id: usize,
    /// K x d projected mean predictions from the final iteration.
    pub points: Vec<Vec<f64>>,
    pub majority: Vec<usize>,
    pub minority: Vec<usize>,
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct DiffTestOutput {
    /// Generated differential images, one batch per class row.
    pub generated: Vec<(usize, ImageBatch)>,
    pub scores: ScoreMatrix,
    pub projections: Vec<ClassProjection>,
}

impl DiffTestOutput {
    /// Flattens the generated images into one dataset (labels are the seed
    /// classes), e.g. for export in the binary dataset layout.
    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        let (_, first) = self
            .generated
            .first()
            .ok_or(SimError::EmptyInput("no generated differential images"))?;
        let mut images = ImageBatch::zeros(0, first.channels, first.height, first.width);
        let mut labels = Vec::new();
        let mut num_classes = 0;
        for (class, batch) in &self.generated {
            images.data.extend_from_slice(&batch.data);
            images.n += batch.n;
            labels.extend(std::iter::repeat_n(*class, batch.n));
            num_classes = num_classes.max(class + 1);
        }
        LabeledDataset::new(images, labels, num_classes)
    }
}

/// Scores for one class from its final clustering.
fn cluster_scores(clusters: &ClusterResult, k: usize) -> Vec<f64> {
    let mut row = vec![0.0; k];
    if clusters.degenerate || clusters.minority.is_empty() {
        return row;
    }
    let majority_score = 2.0 * clusters.majority_std_norm();
    let minority_score = clusters.center_distance();
    for &m in &clusters.majority {
        row[m] = majority_score;
    }
    for &m in &clusters.minority {
        row[m] = minority_score;
    }
    row
}

/// Runs the per-class differential-testing pipeline over every class present
/// in the seed set and assembles the score matrix. Class pipelines are
/// independent and run in parallel; the k-means seed is derived per
/// `(class, iteration)` so results do not depend on scheduling.
pub fn generate_diff_inputs_and_scores(
    seeds: &LabeledDataset,
    models: &[&dyn DifferentiableClassifier],
    agent_ids: &[AgentId],
    cfg: &DiffTestConfig,
    rng_seed: u64,
) -> Result<DiffTestOutput> {
    if seeds.is_empty() {
        return Err(SimError::EmptyInput(
            "differential testing without seed images",
        ));
    }
    let k = models.len();
    if k != agent_ids.len() {
        return Err(SimError::ShapeMismatch(
            "model count != agent id count".into(),
        ));
    }
    if k < 2 {
        return Err(SimError::config(
            "differential testing needs at least 2 models",
        ));
    }
    let num_classes = models[0].num_classes();
    cfg.validate(k, num_classes)?;

    let classes = seeds.present_classes();
    type ClassOutcome = (usize, ImageBatch, ClusterResult, Vec<Vec<f64>>);
    let per_class: Result<Vec<ClassOutcome>> = classes
        .par_iter()
        .map(|&class| {
            let mut batch = seeds.select(&seeds.class_indices(class)).images;
            let mut last: Option<(ClusterResult, Vec<Vec<f64>>)> = None;
            for iter in 0..cfg.iterations {
                let preds = mean_softmax_predictions(models, &batch)?;
                let (projected, map) = pca_project(&preds, cfg.pca_dims)?;
                let clusters = cluster_two(
                    &projected,
                    rng::derive_seed(rng_seed, "difftest-kmeans", &[class as u64, iter as u64]),
                )?;
                batch = differential_step(&batch, models, &preds, &map, &clusters, cfg.step_size)?;
                last = Some((clusters, projected));
            }
            let (clusters, projected) = last.expect("iterations >= 1");
            Ok((class, batch, clusters, projected))
        })
        .collect();
    let per_class = per_class?;

    let mut entries = Vec::with_capacity(per_class.len());
    let mut class_ids = Vec::with_capacity(per_class.len());
    let mut generated = Vec::with_capacity(per_class.len());
    let mut projections = Vec::with_capacity(per_class.len());
    for (class, batch, clusters, projected) in per_class {
        entries.push(cluster_scores(&clusters, k));
        class_ids.push(class);
        generated.push((class, batch));
        projections.push(ClassProjection {
            class_id: class,
            points: projected,
            majority: clusters.majority.clone(),
            minority: clusters.minority.clone(),
            degenerate: clusters.degenerate,
        });
    }

    let scores = ScoreMatrix {
        entries,
        class_ids,
        agent_ids: agent_ids.to_vec(),
    };
    scores.validate()?;
    Ok(DiffTestOutput {
        generated,
        scores,
        projections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{arch, Network};
    use crate::params::ParamVector;
    use crate::rng::stream;
    use rand::RngExt;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn tiny_models(seed: u64, count: usize, classes: usize) -> Vec<Network> {
        let mut base = arch::tiny_mlp((1, 4, 4), 6, classes).unwrap();
        base.init_he(&mut stream(seed, "net-init", &[]));
        let base_params = base.parameters();
        let mut rng = stream(seed, "model-perturb", &[]);
        (0..count)
            .map(|_| {
                let mut net = base.clone();
                let values: Vec<f64> = base_params
                    .values
                    .iter()
                    .map(|v| v + rng.random_range(-0.05..0.05))
                    .collect();
                net.set_parameters(&ParamVector::new(values, base_params.layout_id.clone()))
                    .unwrap();
                net
            })
            .collect()
    }

    fn seed_set(seed: u64, per_class: usize, classes: usize) -> LabeledDataset {
        let mut rng = stream(seed, "seed-data", &[]);
        let n = per_class * classes;
        let mut images = ImageBatch::zeros(n, 1, 4, 4);
        for v in &mut images.data {
            *v = rng.random_range(0.2..0.8);
        }
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        LabeledDataset::new(images, labels, classes).unwrap()
    }

    fn as_dyn(models: &[Network]) -> Vec<&dyn DifferentiableClassifier> {
        models
            .iter()
            .map(|m| m as &dyn DifferentiableClassifier)
            .collect()
    }

    #[test]
    fn mean_predictions_are_distributions() {
        let models = tiny_models(1, 4, 3);
        let refs = as_dyn(&models);
        let data = seed_set(1, 2, 3);
        let preds = mean_softmax_predictions(&refs, &data.images).unwrap();
        assert_eq!(preds.len(), 4);
        for row in preds {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn identical_models_give_identical_rows_and_zero_scores() {
        let one = tiny_models(2, 1, 3).pop().unwrap();
        let models: Vec<Network> = (0..5).map(|_| one.clone()).collect();
        let refs = as_dyn(&models);
        let seeds = seed_set(2, 2, 3);
        let preds = mean_softmax_predictions(&refs, &seeds.images).unwrap();
        for row in &preds[1..] {
            assert_eq!(row, &preds[0]);
        }
        let out = generate_diff_inputs_and_scores(
            &seeds,
            &refs,
            &(0..5).map(AgentId).collect::<Vec<_>>(),
            &DiffTestConfig {
                iterations: 3,
                ..Default::default()
            },
            7,
        )
        .unwrap();
        for row in &out.scores.entries {
            assert!(row.iter().all(|&s| s == 0.0));
        }
        // Degenerate classes leave the batch untouched.
        for (class, batch) in &out.generated {
            let original = seeds.select(&seeds.class_indices(*class)).images;
            assert_eq!(batch, &original);
        }
    }

    #[test]
    fn singleton_batch_mean_equals_single_prediction() {
        let models = tiny_models(3, 3, 3);
        let refs = as_dyn(&models);
        let data = seed_set(3, 1, 3);
        let single = data.images.single(0);
        let preds = mean_softmax_predictions(&refs, &single).unwrap();
        for (model, row) in refs.iter().zip(&preds) {
            assert_eq!(&model.predict_probs(&single)[0], row);
        }
    }

    #[test]
    fn score_rule_hand_example() {
        // Majority {(0,0), (0,2)}, minority {(5,1)}.
        let points = vec![vec![0.0, 0.0], vec![0.0, 2.0], vec![5.0, 1.0]];
        let clusters = cluster_two(&points, 0).unwrap();
        assert_eq!(clusters.majority, vec![0, 1]);
        assert_eq!(clusters.minority, vec![2]);
        let scores = cluster_scores(&clusters, 3);
        assert!((scores[0] - 2.0).abs() < 1e-12);
        assert!((scores[1] - 2.0).abs() < 1e-12);
        assert!((scores[2] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn ascent_gradient_matches_finite_differences() {
        let models = tiny_models(4, 4, 3);
        let refs = as_dyn(&models);
        let seeds = seed_set(4, 2, 3);
        let batch = seeds.select(&seeds.class_indices(0)).images;
        let preds = mean_softmax_predictions(&refs, &batch).unwrap();
        let (projected, map) = pca_project(&preds, 2).unwrap();
        let clusters = cluster_two(&projected, 1).unwrap();
        assert!(!clusters.degenerate);
        let grad = separation_gradient(&batch, &refs, &preds, &map, &clusters)
            .unwrap()
            .unwrap();
        let eps = 1e-3;
        for idx in 0..batch.data.len() {
            let mut plus = batch.clone();
            plus.data[idx] += eps;
            let mut minus = batch.clone();
            minus.data[idx] -= eps;
            let fd = (separation_objective(&plus, &refs, &map, &clusters).unwrap()
                - separation_objective(&minus, &refs, &map, &clusters).unwrap())
                / (2.0 * eps);
            let got = grad.data[idx];
            let denom = fd.abs().max(got.abs()).max(1e-8);
            assert!(
                (fd - got).abs() / denom <= 1e-3,
                "pixel {idx}: fd={fd} analytic={got}"
            );
        }
    }

    #[test]
    fn small_steps_increase_the_objective() {
        let mut improved = 0;
        let trials = 40;
        for t in 0..trials {
            let models = tiny_models(100 + t, 4, 3);
            let refs = as_dyn(&models);
            let seeds = seed_set(200 + t, 2, 3);
            let batch = seeds.select(&seeds.class_indices(0)).images;
            let preds = mean_softmax_predictions(&refs, &batch).unwrap();
            let (projected, map) = pca_project(&preds, 2).unwrap();
            let clusters = cluster_two(&projected, t).unwrap();
            if clusters.degenerate {
                continue;
            }
            let before = separation_objective(&batch, &refs, &map, &clusters).unwrap();
            let stepped = differential_step(&batch, &refs, &preds, &map, &clusters, 0.01).unwrap();
            let after = separation_objective(&stepped, &refs, &map, &clusters).unwrap();
            if after >= before {
                improved += 1;
            }
        }
        assert!(
            improved * 100 >= trials * 95,
            "objective rose on only {improved}/{trials}"
        );
    }

    #[test]
    fn weight_scaled_model_lands_in_the_minority() {
        let classes = 4;
        let mut base = arch::tiny_mlp((1, 4, 4), 8, classes).unwrap();
        base.init_he(&mut stream(40, "net-init", &[]));
        let base_params = base.parameters();
        let mut rng = stream(41, "model-perturb", &[]);
        let mut models: Vec<Network> = Vec::new();
        for i in 0..10 {
            // One model's perturbation is scaled 10x, mimicking weight scaling.
            let scale = if i == 9 { 1.0 } else { 0.1 };
            let values: Vec<f64> = base_params
                .values
                .iter()
                .map(|v| v + scale * rng.random_range(-0.5..0.5))
                .collect();
            let mut net = base.clone();
            net.set_parameters(&ParamVector::new(values, base_params.layout_id.clone()))
                .unwrap();
            models.push(net);
        }
        let refs = as_dyn(&models);
        let seeds = seed_set(42, 2, classes);
        let ids: Vec<AgentId> = (0..10).map(AgentId).collect();
        let out =
            generate_diff_inputs_and_scores(&seeds, &refs, &ids, &DiffTestConfig::default(), 43)
                .unwrap();
        let alone_in_minority = out.projections.iter().any(|p| p.minority == vec![9]);
        assert!(
            alone_in_minority,
            "scaled model never isolated: {:?}",
            out.projections
                .iter()
                .map(|p| p.minority.clone())
                .collect::<Vec<_>>()
        );
    }

    /// Wrapper counting images fed through `predict_probs`.
    struct Counting<'a> {
        inner: &'a Network,
        forwards: &'a AtomicUsize,
    }

    impl<'a> DifferentiableClassifier for Counting<'a> {
        fn layout_id(&self) -> &crate::params::LayoutId {
            self.inner.layout_id()
        }
        fn num_classes(&self) -> usize {
            self.inner.num_classes()
        }
        fn input_shape(&self) -> (usize, usize, usize) {
            self.inner.input_shape()
        }
        fn parameters(&self) -> ParamVector {
            self.inner.parameters()
        }
        fn set_parameters(&mut self, _: &ParamVector) -> crate::error::Result<()> {
            unreachable!("read-only wrapper")
        }
        fn predict_probs(&self, images: &ImageBatch) -> Vec<Vec<f64>> {
            self.forwards.fetch_add(images.n, Ordering::Relaxed);
            self.inner.predict_probs(images)
        }
        fn ce_loss_and_grad(&self, images: &ImageBatch, labels: &[usize]) -> (f64, ParamVector) {
            self.inner.ce_loss_and_grad(images, labels)
        }
        fn input_gradient(&self, images: &ImageBatch, coeff: &[f64]) -> ImageBatch {
            self.inner.input_gradient(images, coeff)
        }
        fn output_vjp(
            &self,
            images: &ImageBatch,
            probs_cotangent: &[Vec<f64>],
        ) -> (ParamVector, ImageBatch) {
            self.inner.output_vjp(images, probs_cotangent)
        }
    }

    #[test]
    fn forward_pass_count_is_exactly_classes_iters_models_batch() {
        let models = tiny_models(50, 5, 3);
        let counter = AtomicUsize::new(0);
        let wrapped: Vec<Counting> = models
            .iter()
            .map(|m| Counting {
                inner: m,
                forwards: &counter,
            })
            .collect();
        let refs: Vec<&dyn DifferentiableClassifier> = wrapped
            .iter()
            .map(|w| w as &dyn DifferentiableClassifier)
            .collect();
        let per_class = 2;
        let seeds = seed_set(51, per_class, 3);
        let cfg = DiffTestConfig {
            iterations: 7,
            ..Default::default()
        };
        generate_diff_inputs_and_scores(
            &seeds,
            &refs,
            &(0..5).map(AgentId).collect::<Vec<_>>(),
            &cfg,
            52,
        )
        .unwrap();
        let expected = 3 * cfg.iterations * 5 * per_class;
        assert_eq!(counter.load(Ordering::Relaxed), expected);
    }

    #[test]
    fn generated_images_export_as_a_dataset() {
        let models = tiny_models(60, 3, 3);
        let refs = as_dyn(&models);
        let seeds = seed_set(61, 2, 3);
        let out = generate_diff_inputs_and_scores(
            &seeds,
            &refs,
            &(0..3).map(AgentId).collect::<Vec<_>>(),
            &DiffTestConfig {
                iterations: 2,
                ..Default::default()
            },
            62,
        )
        .unwrap();
        let dataset = out.to_dataset().unwrap();
        assert_eq!(dataset.len(), seeds.len());
        assert_eq!(dataset.present_classes(), vec![0, 1, 2]);
        assert!(dataset.images.in_unit_range());
        // Round-trips through the binary layout.
        let path = std::env::temp_dir().join("fedsim-diff-export.bin");
        crate::data::write_dataset(&path, &dataset).unwrap();
        let back = crate::data::read_dataset(&path).unwrap();
        assert_eq!(back.labels, dataset.labels);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn scores_are_finite_nonnegative_and_rows_partition() {
        for seed in 0..10u64 {
            let models = tiny_models(300 + seed, 4, 3);
            let refs = as_dyn(&models);
            let seeds = seed_set(400 + seed, 2, 3);
            let out = generate_diff_inputs_and_scores(
                &seeds,
                &refs,
                &(0..4).map(AgentId).collect::<Vec<_>>(),
                &DiffTestConfig {
                    iterations: 4,
                    ..Default::default()
                },
                seed,
            )
            .unwrap();
            out.scores.validate().unwrap();
            for p in &out.projections {
                let mut all: Vec<usize> = p.majority.iter().chain(&p.minority).copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..4).collect::<Vec<_>>());
            }
            for (_, batch) in &out.generated {
                assert!(batch.in_unit_range());
            }
        }
    }
}
