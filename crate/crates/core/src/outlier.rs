//! MAD-based outlier detection over per-agent mean deviation scores.
//!
//! Three variants: the two-step MAD detector used by the defense, plus the
//! classic single-MAD and double-MAD detectors kept for ablation comparisons.
//! All medians over an even count are the mean of the two central order
//! statistics.

use serde::{Deserialize, Serialize};

use crate::difftest::ScoreMatrix;
use crate::error::{Result, SimError};
use crate::fl::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MadVariant {
    #[serde(rename = "two_step_mad", alias = "two_step")]
    TwoStep,
    #[serde(rename = "single_mad", alias = "single")]
    Single,
    #[serde(rename = "double_mad", alias = "double")]
    Double,
}

impl std::fmt::Display for MadVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MadVariant::TwoStep => write!(f, "two_step_mad"),
            MadVariant::Single => write!(f, "single_mad"),
            MadVariant::Double => write!(f, "double_mad"),
        }
    }
}

/// Outlier decision plus every intermediate statistic, for audit logs.
///
/// Field semantics by variant:
/// - `TwoStep`: `mad1`/`mad2` as in the two-step construction below.
/// - `Single`: `mad1` is the classic MAD; `mad2 == mad1`.
/// - `Double`: `mad1` is the left-side MAD, `mad2` the right-side MAD.
///
/// `normalized_deviations` may contain `inf` (single MAD, zero-MAD case) or
/// `NaN` (double MAD, zero-denominator case, treated as non-outlier); both
/// serialize to JSON `null`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub variant: MadVariant,
    pub agent_ids: Vec<AgentId>,
    /// p: per-agent mean score across classes.
    pub mean_scores: Vec<f64>,
    /// m_p = median(p).
    pub median: f64,
    /// q(i) = |p(i) - m_p|.
    pub abs_deviations: Vec<f64>,
    pub mad1: f64,
    pub mad2: f64,
    /// r(i): deviation normalized by the variant's denominator.
    #[serde(with = "non_finite_floats")]
    pub normalized_deviations: Vec<f64>,
    pub cutoff: f64,
    /// Agents with r(i) > cutoff, ascending by id.
    pub outlier_ids: Vec<AgentId>,
}

/// Lossless JSON encoding for float lists that may hold `inf`/`nan` (encoded
/// as strings, since JSON has no non-finite numbers).
mod non_finite_floats {
    use serde::de::Error as _;
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], ser: S) -> Result<S::Ok, S::Error> {
        let mut seq = ser.serialize_seq(Some(values.len()))?;
        for &v in values {
            if v.is_finite() {
                seq.serialize_element(&v)?;
            } else if v.is_nan() {
                seq.serialize_element("nan")?;
            } else if v > 0.0 {
                seq.serialize_element("inf")?;
            } else {
                seq.serialize_element("-inf")?;
            }
        }
        seq.end()
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Encoded {
        Num(f64),
        Tag(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Encoded>::deserialize(de)?;
        raw.into_iter()
            .map(|item| match item {
                Encoded::Num(v) => Ok(v),
                Encoded::Tag(tag) => match tag.as_str() {
                    "nan" => Ok(f64::NAN),
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    other => Err(D::Error::custom(format!("bad float tag `{other}`"))),
                },
            })
            .collect()
    }
}

impl DetectionReport {
    pub fn is_outlier(&self, id: AgentId) -> bool {
        self.outlier_ids.contains(&id)
    }
}

/// Median with the even-count mean-of-central-pair convention.
/// Panics on empty input; callers guard K >= 1.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

struct Deviations {
    agent_ids: Vec<AgentId>,
    mean_scores: Vec<f64>,
    median: f64,
    abs_deviations: Vec<f64>,
}

fn deviations(scores: &ScoreMatrix) -> Result<Deviations> {
    let k = scores.agent_ids.len();
    if k == 0 {
        return Err(SimError::EmptyInput("score matrix has no agents"));
    }
    if scores.entries.is_empty() {
        return Err(SimError::EmptyInput("score matrix has no class rows"));
    }
    let classes = scores.entries.len() as f64;
    let mean_scores: Vec<f64> = (0..k)
        .map(|i| scores.entries.iter().map(|row| row[i]).sum::<f64>() / classes)
        .collect();
    let med = median(&mean_scores);
    let abs_deviations = mean_scores.iter().map(|p| (p - med).abs()).collect();
    Ok(Deviations {
        agent_ids: scores.agent_ids.clone(),
        mean_scores,
        median: med,
        abs_deviations,
    })
}

fn collect_outliers(agent_ids: &[AgentId], r: &[f64], cutoff: f64) -> Vec<AgentId> {
    let mut ids: Vec<AgentId> = agent_ids
        .iter()
        .zip(r)
        .filter(|(_, &ri)| ri > cutoff)
        .map(|(&id, _)| id)
        .collect();
    ids.sort_unstable();
    ids
}

fn check_cutoff(cutoff: f64) -> Result<()> {
    if cutoff <= 0.0 || !cutoff.is_finite() {
        return Err(SimError::config(format!(
            "cutoff must be positive, got {cutoff}"
        )));
    }
    Ok(())
}

/// Two-step MAD. The second denominator `mad2` is the weighted average of
/// `mad1` and the median of deviations greater than `mad1`:
///
/// `mad2 = (|{q <= mad1}|/K)·mad1 + (|{q > mad1}|/K)·median({q : q > mad1})`
///
/// Deviations at or below `mad1` are normalized by `mad1` (0 when `mad1` is
/// zero), larger ones by `mad2`. When no deviation exceeds `mad1`, `mad2`
/// degenerates to `mad1`.
pub fn two_step_mad(scores: &ScoreMatrix, cutoff: f64) -> Result<DetectionReport> {
    check_cutoff(cutoff)?;
    let dev = deviations(scores)?;
    let k = dev.abs_deviations.len() as f64;
    let mad1 = median(&dev.abs_deviations);
    let above: Vec<f64> = dev
        .abs_deviations
        .iter()
        .copied()
        .filter(|&q| q > mad1)
        .collect();
    let mad2 = if above.is_empty() {
        mad1
    } else {
        let ratio = above.len() as f64 / k;
        ratio * median(&above) + (1.0 - ratio) * mad1
    };
    let r: Vec<f64> = dev
        .abs_deviations
        .iter()
        .map(|&q| {
            if q <= mad1 {
                if mad1 == 0.0 {
                    0.0
                } else {
                    q / mad1
                }
            } else {
                q / mad2
            }
        })
        .collect();
    let outlier_ids = collect_outliers(&dev.agent_ids, &r, cutoff);
    Ok(DetectionReport {
        variant: MadVariant::TwoStep,
        agent_ids: dev.agent_ids,
        mean_scores: dev.mean_scores,
        median: dev.median,
        abs_deviations: dev.abs_deviations,
        mad1,
        mad2,
        normalized_deviations: r,
        cutoff,
        outlier_ids,
    })
}

/// Classic MAD: r(i) = q(i) / median(q). Zero-MAD convention: a zero
/// deviation scores 0, any positive deviation is flagged outright.
pub fn single_mad(scores: &ScoreMatrix, cutoff: f64) -> Result<DetectionReport> {
    check_cutoff(cutoff)?;
    let dev = deviations(scores)?;
    let mad = median(&dev.abs_deviations);
    let r: Vec<f64> = dev
        .abs_deviations
        .iter()
        .map(|&q| {
            if mad == 0.0 {
                if q == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                q / mad
            }
        })
        .collect();
    let outlier_ids = collect_outliers(&dev.agent_ids, &r, cutoff);
    Ok(DetectionReport {
        variant: MadVariant::Single,
        agent_ids: dev.agent_ids,
        mean_scores: dev.mean_scores,
        median: dev.median,
        abs_deviations: dev.abs_deviations,
        mad1: mad,
        mad2: mad,
        normalized_deviations: r,
        cutoff,
        outlier_ids,
    })
}

/// Double MAD: separate denominators for points below and at-or-above the
/// median of mean scores. Zero-denominator convention: r(i) = 0 when
/// q(i) = 0, otherwise NaN, and NaN never exceeds the cutoff — this
/// reproduces the variant's known missed detections on heavy-tie data.
pub fn double_mad(scores: &ScoreMatrix, cutoff: f64) -> Result<DetectionReport> {
    check_cutoff(cutoff)?;
    let dev = deviations(scores)?;
    let left: Vec<f64> = dev
        .mean_scores
        .iter()
        .zip(&dev.abs_deviations)
        .filter(|(&p, _)| p <= dev.median)
        .map(|(_, &q)| q)
        .collect();
    let right: Vec<f64> = dev
        .mean_scores
        .iter()
        .zip(&dev.abs_deviations)
        .filter(|(&p, _)| p >= dev.median)
        .map(|(_, &q)| q)
        .collect();
    // Both sides contain the median point(s), so neither is empty for K >= 1.
    let left_mad = median(&left);
    let right_mad = median(&right);
    let r: Vec<f64> = dev
        .mean_scores
        .iter()
        .zip(&dev.abs_deviations)
        .map(|(&p, &q)| {
            let side = if p <= dev.median { left_mad } else { right_mad };
            if q == 0.0 {
                0.0
            } else if side == 0.0 {
                f64::NAN
            } else {
                q / side
            }
        })
        .collect();
    let outlier_ids = collect_outliers(&dev.agent_ids, &r, cutoff);
    Ok(DetectionReport {
        variant: MadVariant::Double,
        agent_ids: dev.agent_ids,
        mean_scores: dev.mean_scores,
        median: dev.median,
        abs_deviations: dev.abs_deviations,
        mad1: left_mad,
        mad2: right_mad,
        normalized_deviations: r,
        cutoff,
        outlier_ids,
    })
}

/// Dispatch by variant.
pub fn detect(variant: MadVariant, scores: &ScoreMatrix, cutoff: f64) -> Result<DetectionReport> {
    match variant {
        MadVariant::TwoStep => two_step_mad(scores, cutoff),
        MadVariant::Single => single_mad(scores, cutoff),
        MadVariant::Double => double_mad(scores, cutoff),
    }
}
