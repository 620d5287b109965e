//! Evaluation metrics: top-k accuracy, mean average precision, and
//! pseudo-label class distributions.
//!
//! All tie-breaking is deterministic and documented, so metric values are
//! reproducible to the bit: ranked classes break probability ties toward the
//! lower class id, and ranked samples break score ties toward the earlier
//! record.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Classifier, ModelError};
use crate::record::ClipRecord;

/// Errors from metric computation.
#[derive(Debug, Error)]
pub enum EvalError {
    /// Accuracy metrics need ground truth on every record.
    #[error("clip {clip_id} has no true label")]
    MissingTrueLabel { clip_id: String },
    /// Distribution stats run on relabeled records only.
    #[error("clip {clip_id} has no pseudo-label")]
    MissingPseudoLabel { clip_id: String },
    /// A label outside the model's class range.
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    /// `k` must satisfy `1 <= k <= num_classes`.
    #[error("top-k rank {k} out of range for {num_classes} classes")]
    KOutOfRange { k: usize, num_classes: usize },
    /// The background class id must name a real class.
    #[error("background class {background} out of range for {num_classes} classes")]
    BackgroundOutOfRange { background: usize, num_classes: usize },
    /// Average precision is undefined for a class with no positives.
    #[error("class {class} has no positive samples; average precision undefined")]
    NoPositives { class: usize },
    /// Mismatched parallel inputs.
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// Scores must be finite to rank.
    #[error("sample {index} has a non-finite score")]
    NonFiniteScore { index: usize },
    /// Metrics over zero samples are undefined.
    #[error("no samples to evaluate")]
    EmptySet,
    /// Forward-pass failure.
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Accuracy summary of one model on one labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Top-1 accuracy.
    pub top1: f64,
    /// Top-5 accuracy; absent when the model has fewer than 5 classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top5: Option<f64>,
    /// Top-1 accuracy per true class.
    pub per_class_accuracy: Vec<f64>,
    pub num_samples: usize,
}

fn true_label_of(record: &ClipRecord, num_classes: usize) -> Result<usize, EvalError> {
    let label = record.true_label.ok_or_else(|| EvalError::MissingTrueLabel {
        clip_id: record.clip_id.clone(),
    })?;
    if label >= num_classes {
        return Err(EvalError::LabelOutOfRange { label, num_classes });
    }
    Ok(label)
}

/// Rank of `label` under "probability descending, class id ascending".
fn rank_of(probs: &[f64], label: usize) -> usize {
    let p = probs[label];
    probs
        .iter()
        .enumerate()
        .filter(|&(c, &q)| q > p || (q == p && c < label))
        .count()
}

/// Fraction of records whose true label ranks in the model's top `k`.
///
/// Classes with equal probability rank by ascending class id, so a tie at
/// rank `k` counts only for the lowest-id tied classes.
pub fn top_k_accuracy<M: Classifier>(
    model: &M,
    records: &[ClipRecord],
    k: usize,
) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptySet);
    }
    if k == 0 || k > model.num_classes() {
        return Err(EvalError::KOutOfRange {
            k,
            num_classes: model.num_classes(),
        });
    }
    let mut correct = 0usize;
    for record in records {
        let label = true_label_of(record, model.num_classes())?;
        let probs = model.probabilities(&record.features)?;
        if rank_of(&probs, label) < k {
            correct += 1;
        }
    }
    Ok(correct as f64 / records.len() as f64)
}

/// Top-1, top-5 (when the model has at least 5 classes), and per-class
/// accuracy of `model` on `records`.
pub fn evaluate_model<M: Classifier>(
    model: &M,
    records: &[ClipRecord],
) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let num_classes = model.num_classes();
    let mut top1_correct = 0usize;
    let mut top5_correct = 0usize;
    let mut class_correct = vec![0usize; num_classes];
    let mut class_total = vec![0usize; num_classes];
    for record in records {
        let label = true_label_of(record, num_classes)?;
        let probs = model.probabilities(&record.features)?;
        let rank = rank_of(&probs, label);
        class_total[label] += 1;
        if rank == 0 {
            top1_correct += 1;
            class_correct[label] += 1;
        }
        if rank < 5 {
            top5_correct += 1;
        }
    }
    let count = records.len() as f64;
    let per_class_accuracy = class_correct
        .iter()
        .zip(&class_total)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    Ok(EvalReport {
        top1: top1_correct as f64 / count,
        top5: (num_classes >= 5).then(|| top5_correct as f64 / count),
        per_class_accuracy,
        num_samples: records.len(),
    })
}

/// Non-interpolated mean average precision over all classes except
/// `background`.
///
/// For each class, samples rank by that class's score (descending; ties keep
/// record order) and the average precision is the mean of the precisions at
/// each positive sample's rank. Any evaluated class without a positive
/// sample is an error.
pub fn mean_ap_excluding_background(
    scores: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    background: usize,
) -> Result<f64, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptySet);
    }
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            what: "labels per score row",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if background >= num_classes {
        return Err(EvalError::BackgroundOutOfRange {
            background,
            num_classes,
        });
    }
    for (index, row) in scores.iter().enumerate() {
        if row.len() != num_classes {
            return Err(EvalError::LengthMismatch {
                what: "score row length",
                expected: num_classes,
                got: row.len(),
            });
        }
        if row.iter().any(|s| !s.is_finite()) {
            return Err(EvalError::NonFiniteScore { index });
        }
    }
    for &label in labels {
        if label >= num_classes {
            return Err(EvalError::LabelOutOfRange {
                label,
                num_classes,
            });
        }
    }

    let mut ap_sum = 0.0;
    let mut evaluated = 0usize;
    for class in (0..num_classes).filter(|&c| c != background) {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b][class]
                .partial_cmp(&scores[a][class])
                .expect("scores validated finite")
                .then(a.cmp(&b))
        });
        let mut positives = 0usize;
        let mut precision_sum = 0.0;
        for (rank, &idx) in order.iter().enumerate() {
            if labels[idx] == class {
                positives += 1;
                precision_sum += positives as f64 / (rank + 1) as f64;
            }
        }
        if positives == 0 {
            return Err(EvalError::NoPositives { class });
        }
        ap_sum += precision_sum / positives as f64;
        evaluated += 1;
    }
    Ok(ap_sum / evaluated as f64)
}

/// [`mean_ap_excluding_background`] with scores taken from a model's
/// probabilities and labels from the records' ground truth.
pub fn model_mean_ap<M: Classifier>(
    model: &M,
    records: &[ClipRecord],
    background: usize,
) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut scores = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for record in records {
        labels.push(true_label_of(record, model.num_classes())?);
        scores.push(model.probabilities(&record.features)?);
    }
    mean_ap_excluding_background(&scores, &labels, model.num_classes(), background)
}

/// How relabeled samples spread over a pseudo-label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub num_classes: usize,
    /// Samples per pseudo-label class.
    pub class_counts: Vec<u64>,
    pub total: u64,
    /// Median of `class_counts` (mean of the two middle values when the
    /// class count is even).
    pub median_count: f64,
    /// Classes with at least the median count.
    pub head_classes: usize,
    /// Classes below the median count.
    pub tail_classes: usize,
}

/// Tallies pseudo-labels over `num_classes` classes and splits the classes
/// into a head (count >= median) and tail (count < median).
pub fn class_distribution(
    records: &[ClipRecord],
    num_classes: usize,
) -> Result<ClassDistribution, EvalError> {
    let mut class_counts = vec![0u64; num_classes];
    for record in records {
        let label = record
            .pseudo_label
            .ok_or_else(|| EvalError::MissingPseudoLabel {
                clip_id: record.clip_id.clone(),
            })?;
        if label >= num_classes {
            return Err(EvalError::LabelOutOfRange {
                label,
                num_classes,
            });
        }
        class_counts[label] += 1;
    }
    let mut sorted = class_counts.clone();
    sorted.sort_unstable();
    let median_count = if sorted.is_empty() {
        0.0
    } else if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2] as f64
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) as f64 / 2.0
    };
    let head_classes = class_counts.iter().filter(|&&c| c as f64 >= median_count).count();
    Ok(ClassDistribution {
        num_classes,
        total: class_counts.iter().sum(),
        tail_classes: num_classes - head_classes,
        head_classes,
        median_count,
        class_counts,
    })
}
