//! Machine-readable evaluation reports: per-seed detection metrics for the
//! seen and unseen OOD splits plus mean/std aggregates.

use aiol_core::data::DatasetBundle;
use aiol_core::metrics::{self, ScoreSet};
use aiol_core::nn::ParameterSet;
use aiol_core::trainer;
use anyhow::Result;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr_at_95_tpr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub accuracy: f64,
    pub seen: DetectionMetrics,
    pub unseen: DetectionMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_file: Option<String>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: MeanStd,
    pub seen_auroc: MeanStd,
    pub seen_aupr: MeanStd,
    pub seen_fpr_at_95_tpr: MeanStd,
    pub unseen_auroc: MeanStd,
    pub unseen_aupr: MeanStd,
    pub unseen_fpr_at_95_tpr: MeanStd,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config_hash: String,
    pub per_seed: Vec<SeedEntry>,
    pub aggregate: Aggregate,
}

impl Report {
    pub fn new(config_hash: String, per_seed: Vec<SeedEntry>) -> Self {
        let acc: Vec<f64> = per_seed.iter().map(|e| e.accuracy).collect();
        let pick = |f: fn(&SeedEntry) -> f64| -> MeanStd {
            mean_std(&per_seed.iter().map(f).collect::<Vec<f64>>())
        };
        let aggregate = Aggregate {
            accuracy: mean_std(&acc),
            seen_auroc: pick(|e| e.seen.auroc),
            seen_aupr: pick(|e| e.seen.aupr),
            seen_fpr_at_95_tpr: pick(|e| e.seen.fpr_at_95_tpr),
            unseen_auroc: pick(|e| e.unseen.auroc),
            unseen_aupr: pick(|e| e.unseen.aupr),
            unseen_fpr_at_95_tpr: pick(|e| e.unseen.fpr_at_95_tpr),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash,
            per_seed,
            aggregate,
        }
    }
}

fn detection(id_scores: &[f64], ood_scores: &[f64]) -> Result<DetectionMetrics> {
    let set = ScoreSet::new(id_scores.to_vec(), ood_scores.to_vec())?;
    Ok(DetectionMetrics {
        auroc: metrics::auroc(&set),
        aupr: metrics::aupr(&set),
        fpr_at_95_tpr: metrics::fpr_at_95_tpr(&set),
    })
}

/// Evaluate a trained model on the test splits of a bundle: ID accuracy and
/// seen/unseen detection metrics from confidence scores at temperature `t`.
pub fn evaluate_model(
    params: &ParameterSet,
    bundle: &DatasetBundle,
    t: f64,
    seed: u64,
) -> Result<SeedEntry> {
    let id_features: Vec<Vec<f64>> = bundle
        .test_id
        .iter()
        .map(|s| s.features.clone())
        .collect();
    let seen_features: Vec<Vec<f64>> = bundle
        .test_seen_ood
        .iter()
        .map(|s| s.features.clone())
        .collect();
    let unseen_features: Vec<Vec<f64>> = bundle
        .test_unseen_ood
        .iter()
        .map(|s| s.features.clone())
        .collect();

    let id_scores = trainer::confidence_scores(params, &id_features, t)?;
    let seen_scores = trainer::confidence_scores(params, &seen_features, t)?;
    let unseen_scores = trainer::confidence_scores(params, &unseen_features, t)?;

    let test_pairs: Vec<(Vec<f64>, usize)> = bundle
        .test_id
        .iter()
        .map(|s| (s.features.clone(), s.label.expect("test_id is labeled")))
        .collect();
    let accuracy = metrics::classification_accuracy(params, &test_pairs)?;

    Ok(SeedEntry {
        seed,
        accuracy,
        seen: detection(&id_scores, &seen_scores)?,
        unseen: detection(&id_scores, &unseen_scores)?,
        trace_file: None,
        checkpoint_file: None,
    })
}
