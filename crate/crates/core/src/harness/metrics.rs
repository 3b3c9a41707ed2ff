//! Evaluation metrics: accuracies, detection rates, post-convergence peaks.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fl::RoundRecord;
use crate::image::LabeledDataset;
use crate::nn::DifferentiableClassifier;

/// Argmax prediction for one probability row; ties go to the lowest class.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Fraction of test samples whose argmax prediction matches the label.
pub fn compute_global_accuracy(
    model: &dyn DifferentiableClassifier,
    testset: &LabeledDataset,
) -> Result<f64> {
    if testset.is_empty() {
        return Err(SimError::EmptyInput("accuracy over an empty test set"));
    }
    let probs = model.predict_probs(&testset.images);
    let correct = probs
        .iter()
        .zip(&testset.labels)
        .filter(|(p, &label)| argmax(p) == label)
        .count();
    Ok(correct as f64 / testset.len() as f64)
}

/// Accuracy on the backdoor test set (triggered or semantic images labeled
/// with the target class): the attack success rate.
pub fn compute_backdoor_accuracy(
    model: &dyn DifferentiableClassifier,
    backdoor_testset: &LabeledDataset,
) -> Result<f64> {
    compute_global_accuracy(model, backdoor_testset)
}

/// Mean per-round false positive / false negative rates. Rounds without a
/// selected benign agent are excluded from the FPR mean, rounds without a
/// selected adversary from the FNR mean; `None` marks a vacuous mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    pub mean_fpr: Option<f64>,
    pub mean_fnr: Option<f64>,
}

pub fn compute_detection_rates(records: &[RoundRecord]) -> DetectionRates {
    let mut fpr_sum = 0.0;
    let mut fpr_rounds = 0usize;
    let mut fnr_sum = 0.0;
    let mut fnr_rounds = 0usize;
    for record in records {
        let benign: Vec<_> = record
            .selected_agent_ids
            .iter()
            .filter(|id| !record.adversary_ids_selected.contains(id))
            .collect();
        if !benign.is_empty() {
            let false_pos = benign
                .iter()
                .filter(|id| record.flagged_outliers.contains(id))
                .count();
            fpr_sum += false_pos as f64 / benign.len() as f64;
            fpr_rounds += 1;
        }
        let adversaries = &record.adversary_ids_selected;
        if !adversaries.is_empty() {
            let missed = adversaries
                .iter()
                .filter(|id| !record.flagged_outliers.contains(id))
                .count();
            fnr_sum += missed as f64 / adversaries.len() as f64;
            fnr_rounds += 1;
        }
    }
    DetectionRates {
        mean_fpr: (fpr_rounds > 0).then(|| fpr_sum / fpr_rounds as f64),
        mean_fnr: (fnr_rounds > 0).then(|| fnr_sum / fnr_rounds as f64),
    }
}

/// Maximum backdoor accuracy over rounds at or after the first round whose
/// global accuracy reached `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxBaAfterConvergence {
    pub value: f64,
    /// False when the threshold was never reached; `value` is then the
    /// full-history maximum.
    pub converged: bool,
}

pub fn max_ba_after_convergence(
    history: &[(f64, f64)],
    threshold: f64,
) -> Result<MaxBaAfterConvergence> {
    if history.is_empty() {
        return Err(SimError::EmptyInput("convergence scan over empty history"));
    }
    let start = history.iter().position(|(ga, _)| *ga >= threshold);
    let (slice, converged) = match start {
        Some(i) => (&history[i..], true),
        None => (history, false),
    };
    let value = slice
        .iter()
        .map(|(_, ba)| *ba)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(MaxBaAfterConvergence { value, converged })
}
