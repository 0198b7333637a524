//! Classification metrics over `(predicted, reference)` label-set pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelKind, LabelSet, LabelSpace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("metric over an empty list of pairs")]
    Empty,
    #[error("ROC-AUC needs a binary space")]
    NotBinary,
    #[error("ROC-AUC needs both classes among the references")]
    SingleClass,
}

/// How a pair of two empty sets scores under Jaccard.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPairConvention {
    /// Both empty counts as full agreement.
    #[default]
    BothEmptyIsOne,
    /// Both-empty pairs are left out of the mean.
    ExcludeBothEmpty,
}

fn non_empty<T>(pairs: &[T]) -> Result<(), MetricsError> {
    if pairs.is_empty() {
        Err(MetricsError::Empty)
    } else {
        Ok(())
    }
}

/// Mean per-pair |A ∩ B| / |A ∪ B|; two empty sets score 1.
pub fn jaccard_samples(pairs: &[(LabelSet, LabelSet)]) -> Result<f64, MetricsError> {
    non_empty(pairs)?;
    Ok(pairs.iter().map(|(a, b)| a.jaccard(b)).sum::<f64>() / pairs.len() as f64)
}

/// Jaccard mean under an explicit empty-pair convention. Returns `None`
/// when every pair is excluded.
pub fn jaccard_with(
    pairs: &[(LabelSet, LabelSet)],
    convention: EmptyPairConvention,
) -> Result<Option<f64>, MetricsError> {
    non_empty(pairs)?;
    match convention {
        EmptyPairConvention::BothEmptyIsOne => jaccard_samples(pairs).map(Some),
        EmptyPairConvention::ExcludeBothEmpty => {
            let kept: Vec<f64> = pairs
                .iter()
                .filter(|(a, b)| !(a.is_empty() && b.is_empty()))
                .map(|(a, b)| a.jaccard(b))
                .collect();
            Ok((!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64))
        }
    }
}

/// Per-label confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl LabelCounts {
    /// F1 with 0/0 defined as 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// Whether the label occurs in either the predictions or references.
    pub fn has_support(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }
}

/// Confusion counts for each label of a space with `n_labels` labels.
pub fn per_label_counts(pairs: &[(LabelSet, LabelSet)], n_labels: usize) -> Vec<LabelCounts> {
    let mut counts = vec![LabelCounts::default(); n_labels];
    for (pred, truth) in pairs {
        for (l, c) in counts.iter_mut().enumerate() {
            match (pred.contains(l), truth.contains(l)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    counts
}

/// F1 over pooled per-label decisions: 2TP / (2TP + FP + FN).
pub fn micro_f1(pairs: &[(LabelSet, LabelSet)]) -> Result<f64, MetricsError> {
    non_empty(pairs)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (pred, truth) in pairs {
        let inter = pred.intersection_len(truth);
        tp += inter;
        fp += pred.len() - inter;
        fn_ += truth.len() - inter;
    }
    let denom = 2 * tp + fp + fn_;
    // Every pair empty on both sides: nothing to get wrong.
    Ok(if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

/// Unweighted mean of per-label F1 over all labels of the space; a label
/// with no true positives, false positives or false negatives scores 0.
pub fn macro_f1(pairs: &[(LabelSet, LabelSet)], n_labels: usize) -> Result<f64, MetricsError> {
    non_empty(pairs)?;
    let counts = per_label_counts(pairs, n_labels);
    Ok(counts.iter().map(LabelCounts::f1).sum::<f64>() / n_labels as f64)
}

/// Exact set-match rate.
pub fn accuracy(pairs: &[(LabelSet, LabelSet)]) -> Result<f64, MetricsError> {
    non_empty(pairs)?;
    Ok(pairs.iter().filter(|(a, b)| a == b).count() as f64 / pairs.len() as f64)
}

/// ROC-AUC from hard predictions, (TPR + TNR) / 2. Without scores there is
/// a single operating point, so this is balanced accuracy, not a
/// threshold-swept area.
pub fn roc_auc_binary(
    pairs: &[(LabelSet, LabelSet)],
    space: &LabelSpace,
) -> Result<f64, MetricsError> {
    non_empty(pairs)?;
    let positive = match (space.kind, space.positive_index()) {
        (LabelKind::Binary, Some(p)) => p,
        _ => return Err(MetricsError::NotBinary),
    };
    let (mut tp, mut pos, mut tn, mut neg) = (0u64, 0u64, 0u64, 0u64);
    for (pred, truth) in pairs {
        if truth.contains(positive) {
            pos += 1;
            tp += u64::from(pred.contains(positive));
        } else {
            neg += 1;
            tn += u64::from(!pred.contains(positive));
        }
    }
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok((tp as f64 / pos as f64 + tn as f64 / neg as f64) / 2.0)
}

/// F1 of the positive class of a binary space.
pub fn binary_f1(pairs: &[(LabelSet, LabelSet)], space: &LabelSpace) -> Result<f64, MetricsError> {
    non_empty(pairs)?;
    let positive = space.positive_index().ok_or(MetricsError::NotBinary)?;
    let counts = per_label_counts(pairs, space.len());
    Ok(counts[positive].f1())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub jaccard_samples: f64,
    /// Jaccard with both-empty pairs left out; `None` if all pairs were
    /// both-empty.
    pub jaccard_excluding_empty: Option<f64>,
    pub jaccard_convention: EmptyPairConvention,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positive_f1: Option<f64>,
    pub n: usize,
    pub n_unparsed: usize,
}

impl MetricReport {
    pub fn compute(
        pairs: &[(LabelSet, LabelSet)],
        space: &LabelSpace,
        n_unparsed: usize,
    ) -> Result<Self, MetricsError> {
        let binary = space.kind == LabelKind::Binary;
        Ok(MetricReport {
            jaccard_samples: jaccard_samples(pairs)?,
            jaccard_excluding_empty: jaccard_with(pairs, EmptyPairConvention::ExcludeBothEmpty)?,
            jaccard_convention: EmptyPairConvention::BothEmptyIsOne,
            micro_f1: micro_f1(pairs)?,
            macro_f1: macro_f1(pairs, space.len())?,
            accuracy: accuracy(pairs)?,
            roc_auc: if binary {
                roc_auc_binary(pairs, space).ok()
            } else {
                None
            },
            positive_f1: if binary {
                binary_f1(pairs, space).ok()
            } else {
                None
            },
            n: pairs.len(),
            n_unparsed,
        })
    }
}
