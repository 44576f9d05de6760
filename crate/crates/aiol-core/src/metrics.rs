//! Detection metrics (AUROC, AUPR, FPR95), the threshold detector, selection
//! precision/recall/F-score against hidden truth, and ID accuracy.

use alloc::vec::Vec;

use serde::Serialize;

use crate::data::OodTruth;
use crate::error::{Error, Result};
use crate::nn::{self, Logits, ParameterSet};
use crate::selection::SelectionResult;

/// Detection scores of the ID and OOD evaluation sets.
#[derive(Clone, Debug)]
pub struct ScoreSet {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        if id_scores.is_empty() || ood_scores.is_empty() {
            return Err(Error::InvalidArgument(
                "both score lists must be nonempty".into(),
            ));
        }
        if id_scores
            .iter()
            .chain(&ood_scores)
            .any(|s| !s.is_finite())
        {
            return Err(Error::InvalidArgument("non-finite score".into()));
        }
        Ok(Self {
            id_scores,
            ood_scores,
        })
    }
}

/// AUROC with the 0.5-credit tie convention (Mann-Whitney rank statistic):
/// P(id > ood) + 0.5 P(id = ood) over all cross pairs.
pub fn auroc(s: &ScoreSet) -> f64 {
    let n_id = s.id_scores.len();
    let n_ood = s.ood_scores.len();
    let mut all: Vec<(f64, bool)> = s
        .id_scores
        .iter()
        .map(|&v| (v, true))
        .chain(s.ood_scores.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // average ranks within tie groups, then the rank-sum statistic
    let mut rank_sum_id = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1..=j
        for item in &all[i..j] {
            if item.1 {
                rank_sum_id += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_id - (n_id * (n_id + 1)) as f64 / 2.0;
    u / (n_id as f64 * n_ood as f64)
}

/// Area under precision-recall with ID as the positive class, using
/// step-wise interpolation over the sorted unique thresholds.
pub fn aupr(s: &ScoreSet) -> f64 {
    let n_id = s.id_scores.len() as f64;
    let mut thresholds: Vec<f64> = s
        .id_scores
        .iter()
        .chain(&s.ood_scores)
        .copied()
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let tp = s.id_scores.iter().filter(|&&v| v >= t).count() as f64;
        let fp = s.ood_scores.iter().filter(|&&v| v >= t).count() as f64;
        let recall = tp / n_id;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

/// FPR at the largest threshold achieving TPR >= 0.95, where TPR counts ID
/// scores strictly above the threshold.
pub fn fpr_at_95_tpr(s: &ScoreSet) -> f64 {
    let n_id = s.id_scores.len() as f64;
    let n_ood = s.ood_scores.len() as f64;
    let mut thresholds: Vec<f64> = s
        .id_scores
        .iter()
        .chain(&s.ood_scores)
        .copied()
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    for &t in &thresholds {
        let tpr = s.id_scores.iter().filter(|&&v| v > t).count() as f64 / n_id;
        if tpr >= 0.95 {
            return s.ood_scores.iter().filter(|&&v| v > t).count() as f64 / n_ood;
        }
    }
    // only a threshold below every score reaches TPR >= 0.95
    1.0
}

/// Detector decision: an ID class prediction or rejection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Id(usize),
    Reject,
}

/// Confidence-threshold detector at T = 1: predict the argmax class when the
/// confidence strictly exceeds the threshold, otherwise reject.
pub fn detect(logits: &Logits, threshold: f64) -> Result<Decision> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::InvalidArgument(
            "detector threshold must lie in (0,1)".into(),
        ));
    }
    let p = nn::softmax_with_temperature(logits, 1.0)?;
    let class = p.argmax();
    if p.values()[class] > threshold {
        Ok(Decision::Id(class))
    } else {
        Ok(Decision::Reject)
    }
}

/// Which side of the selection is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionSide {
    Id,
    Ood,
}

/// Precision / recall / F-score of a selection.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PrfResult {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Selection quality against the hidden flags of U. Empty selections score
/// (0, 0, 0) by convention.
pub fn selection_prf(
    selection: &SelectionResult,
    truth: &[OodTruth],
    side: SelectionSide,
) -> PrfResult {
    let (selected, is_relevant): (&[usize], fn(OodTruth) -> bool) = match side {
        SelectionSide::Id => (&selection.in_indices, |t| t == OodTruth::Id),
        SelectionSide::Ood => (&selection.out_indices, |t| t != OodTruth::Id),
    };
    let total_relevant = truth.iter().filter(|&&t| is_relevant(t)).count();
    if selected.is_empty() {
        return PrfResult {
            precision: 0.0,
            recall: 0.0,
            f_score: 0.0,
        };
    }
    let hits = selected.iter().filter(|&&i| is_relevant(truth[i])).count();
    let precision = hits as f64 / selected.len() as f64;
    let recall = if total_relevant == 0 {
        0.0
    } else {
        hits as f64 / total_relevant as f64
    };
    let f_score = if precision > 0.0 && recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    PrfResult {
        precision,
        recall,
        f_score,
    }
}

/// Fraction of test-ID samples whose argmax logit matches the label; ties
/// break toward the lowest class index.
pub fn classification_accuracy(
    params: &ParameterSet,
    test_id: &[(Vec<f64>, usize)],
) -> Result<f64> {
    if test_id.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let mut correct = 0usize;
    for (x, y) in test_id {
        let z = nn::forward(params, x)?;
        if nn::argmax(z.values()) == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_id.len() as f64)
}
