//! Two-component 1-D Gaussian mixture on unlabeled confidence scores,
//! dynamic thresholds, and the per-epoch ID/OOD subset selection.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Floor applied to component variances so near-duplicate scores cannot
/// collapse a component.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Two-component mixture; `g1` is the higher-mean (ID) component by
/// convention.
#[derive(Clone, Copy, Debug)]
pub struct GmmModel {
    pub weight: [f64; 2],
    pub mean: [f64; 2],
    pub variance: [f64; 2],
}

impl GmmModel {
    fn density(&self, k: usize, x: f64) -> f64 {
        let v = self.variance[k];
        let d = x - self.mean[k];
        math::exp(-d * d / (2.0 * v)) / math::sqrt(2.0 * core::f64::consts::PI * v)
    }

    /// Unnormalized posterior weight of component `k` at `x`.
    fn joint(&self, k: usize, x: f64) -> f64 {
        self.weight[k] * self.density(k, x)
    }
}

/// Fitted model plus the EM log-likelihood trajectory.
#[derive(Clone, Debug)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
}

/// Dynamic selection thresholds derived from the fitted mixture.
#[derive(Clone, Copy, Debug)]
pub struct ThresholdPair {
    pub tau_in: f64,
    pub tau_out: f64,
    pub clamped_in: bool,
    pub clamped_out: bool,
}

/// Indices of the selected ID and OOD subsets of U.
#[derive(Clone, Debug, Default)]
pub struct SelectionResult {
    pub in_indices: Vec<usize>,
    pub out_indices: Vec<usize>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = (q * (sorted.len() - 1) as f64) as usize;
    sorted[idx]
}

fn log_likelihood(model: &GmmModel, scores: &[f64]) -> f64 {
    scores
        .iter()
        .map(|&s| math::ln_floored(model.joint(0, s) + model.joint(1, s)))
        .sum()
}

/// Fit a two-component 1-D GMM with EM.
///
/// Initialization is deterministic: means at the 75th/25th percentiles,
/// equal weights, shared variance equal to the sample variance. Components
/// are kept ordered so index 0 is the higher-mean one.
pub fn fit_gmm_1d(scores: &[f64], max_iters: usize, tol: f64) -> Result<GmmFit> {
    if scores.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "GMM needs at least 4 scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let n = scores.len() as f64;
    let mean: f64 = scores.iter().sum::<f64>() / n;
    let var: f64 = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    if var < 1e-18 {
        return Err(Error::DegenerateDistribution(
            "all confidence scores are (near-)identical".into(),
        ));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));

    let mut model = GmmModel {
        weight: [0.5, 0.5],
        mean: [percentile(&sorted, 0.75), percentile(&sorted, 0.25)],
        variance: [var.max(VARIANCE_FLOOR); 2],
    };
    if model.mean[0] == model.mean[1] {
        // quartiles can coincide on heavily tied data; fall back to extremes
        model.mean = [sorted[sorted.len() - 1], sorted[0]];
    }

    let mut logliks = Vec::new();
    logliks.push(log_likelihood(&model, scores));
    let mut iterations = 0;
    let mut resp = alloc::vec![0.0; scores.len()];
    for _ in 0..max_iters {
        iterations += 1;
        // E step: responsibility of component 0
        for (r, &s) in resp.iter_mut().zip(scores) {
            let j0 = model.joint(0, s);
            let j1 = model.joint(1, s);
            *r = j0 / (j0 + j1).max(math::LOG_FLOOR);
        }
        // M step
        let n0: f64 = resp.iter().sum();
        let n1 = n - n0;
        if n0 < 1e-9 || n1 < 1e-9 {
            break; // one component vanished; keep the previous fit
        }
        let mu0 = resp.iter().zip(scores).map(|(r, s)| r * s).sum::<f64>() / n0;
        let mu1 = resp
            .iter()
            .zip(scores)
            .map(|(r, s)| (1.0 - r) * s)
            .sum::<f64>()
            / n1;
        let v0 = resp
            .iter()
            .zip(scores)
            .map(|(r, s)| r * (s - mu0) * (s - mu0))
            .sum::<f64>()
            / n0;
        let v1 = resp
            .iter()
            .zip(scores)
            .map(|(r, s)| (1.0 - r) * (s - mu1) * (s - mu1))
            .sum::<f64>()
            / n1;
        model.weight = [n0 / n, n1 / n];
        model.mean = [mu0, mu1];
        model.variance = [v0.max(VARIANCE_FLOOR), v1.max(VARIANCE_FLOOR)];

        let ll = log_likelihood(&model, scores);
        let improved = ll - logliks[logliks.len() - 1];
        logliks.push(ll);
        if improved.abs() < tol {
            break;
        }
    }

    // bind g1 to the higher-mean component
    if model.mean[0] < model.mean[1] {
        model.weight.swap(0, 1);
        model.mean.swap(0, 1);
        model.variance.swap(0, 1);
    }

    Ok(GmmFit {
        model,
        log_likelihoods: logliks,
        iterations,
    })
}

/// Split score indices by posterior: g1 wins strictly, ties go to g2.
pub fn posterior_split(model: &GmmModel, scores: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut g1 = Vec::new();
    let mut g2 = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        if model.joint(0, s) > model.joint(1, s) {
            g1.push(i);
        } else {
            g2.push(i);
        }
    }
    (g1, g2)
}

/// Thresholds: per-group mean confidence, clamped to tau_in <= 0.95 and
/// tau_out >= 1/K + 0.05.
pub fn compute_thresholds(model: &GmmModel, scores: &[f64], k: usize) -> Result<ThresholdPair> {
    let (g1, g2) = posterior_split(model, scores);
    if g1.is_empty() || g2.is_empty() {
        return Err(Error::DegenerateDistribution(
            "a posterior group is empty".into(),
        ));
    }
    let mean_of = |idx: &[usize]| idx.iter().map(|&i| scores[i]).sum::<f64>() / idx.len() as f64;
    let raw_in = mean_of(&g1);
    let raw_out = mean_of(&g2);
    let floor_out = 1.0 / k as f64 + 0.05;
    let tau_in = raw_in.min(0.95);
    let tau_out = raw_out.max(floor_out);
    if tau_out > tau_in {
        // the OOD floor crossed the ID mean; no usable band this epoch
        return Err(Error::DegenerateDistribution(format!(
            "clamped thresholds are inverted: tau_in={tau_in}, tau_out={tau_out}"
        )));
    }
    Ok(ThresholdPair {
        tau_in,
        tau_out,
        clamped_in: raw_in > 0.95,
        clamped_out: raw_out < floor_out,
    })
}

/// Strict-inequality selection: ID above tau_in, OOD below tau_out.
pub fn select_in_out(scores: &[f64], thresholds: &ThresholdPair) -> SelectionResult {
    let mut result = SelectionResult::default();
    for (i, &s) in scores.iter().enumerate() {
        if s > thresholds.tau_in {
            result.in_indices.push(i);
        } else if s < thresholds.tau_out {
            result.out_indices.push(i);
        }
    }
    result
}
