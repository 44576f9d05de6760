//! The four loss terms, the weighted total, the two-stage schedule, and the
//! full training loop producing a trained model and a diagnostic trace.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentationPolicy, MixupConfig};
use crate::data::{self, DatasetBundle, OodTruth};
use crate::error::{Error, Result};
use crate::math;
use crate::metrics::{self, PrfResult, ScoreSet, SelectionSide};
use crate::nn::{self, EmaState, GradientSet, ParameterSet, Probs};
use crate::selection::{self, SelectionResult, ThresholdPair};
use crate::temperature::{calibrate_temperature, CalibrationConfig};

/// Per-stage weights of the consistency and entropy losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub omega: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// How selection thresholds are obtained each epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    DynamicGmm,
    Fixed { tau_in: f64, tau_out: f64 },
}

/// Mixup variant used inside the entropy losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixupMode {
    /// lambda' = max(lambda, 1 - lambda), the modified mixup.
    Modified,
    /// Raw Beta draw without the max rule.
    Vanilla,
    /// No mixing; the strong transform alone.
    Off,
}

/// Full training configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub stage_switch_fraction: f64,
    pub temperature_warmup_epochs: usize,
    pub batch_l: usize,
    pub batch_u: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub mixup: MixupConfig,
    pub mixup_mode: MixupMode,
    pub policy: AugmentationPolicy,
    pub hidden_layers: Vec<usize>,
    pub seed: u64,
    pub t_min: f64,
    pub t_max: f64,
    pub t_tol: f64,
    /// Train with Eq 1 only (the confidence baseline).
    pub supervised_only: bool,
    /// Calibrate T_t per epoch; otherwise `fixed_temperature` is used.
    pub adaptive_temperature: bool,
    pub fixed_temperature: f64,
    pub threshold_mode: ThresholdMode,
    /// Apply the strong transform (and mixup) inside the entropy losses.
    pub selection_augment: bool,
}

impl TrainConfig {
    /// Paper-faithful defaults: 256 epochs x 512 iterations, warmup 40.
    pub fn paper_defaults(seed: u64) -> Self {
        Self {
            epochs: 256,
            iterations_per_epoch: data::DEFAULT_ITERATIONS_PER_EPOCH,
            stage_switch_fraction: 0.8,
            temperature_warmup_epochs: 40,
            batch_l: 32,
            batch_u: 64,
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            ema_decay: 0.999,
            mixup: MixupConfig::default(),
            mixup_mode: MixupMode::Modified,
            policy: AugmentationPolicy::default(),
            hidden_layers: vec![64, 64],
            seed,
            t_min: 0.25,
            t_max: 10.0,
            t_tol: 1e-3,
            supervised_only: false,
            adaptive_temperature: true,
            fixed_temperature: 1.0,
            threshold_mode: ThresholdMode::DynamicGmm,
            selection_augment: true,
        }
    }

    /// Desk-scale override for minutes-long runs: 60 epochs x 100
    /// iterations, warmup 10. The higher learning rate compensates for the
    /// short schedule: the adaptive temperature only has something to
    /// calibrate once the network is sharp enough to be overconfident.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            epochs: 60,
            iterations_per_epoch: 100,
            temperature_warmup_epochs: 10,
            lr: 0.1,
            ema_decay: 0.99,
            ..Self::paper_defaults(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(0.0 < self.stage_switch_fraction && self.stage_switch_fraction < 1.0) {
            return Err(Error::InvalidArgument(
                "stage switch fraction must lie in (0,1)".into(),
            ));
        }
        self.policy.validate()?;
        if let ThresholdMode::Fixed { tau_in, tau_out } = self.threshold_mode {
            if tau_out > tau_in {
                return Err(Error::InvalidArgument(format!(
                    "fixed thresholds inverted: ({tau_in}, {tau_out})"
                )));
            }
        }
        Ok(())
    }

    fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            t_min: self.t_min,
            t_max: self.t_max,
            tol: self.t_tol,
        }
    }

    /// Last epoch of stage 1 (supervised + consistency).
    pub fn stage_switch_epoch(&self) -> usize {
        math::floor(self.stage_switch_fraction * self.epochs as f64) as usize
    }
}

/// Eq 12 stage schedule: (1,0,0) through 80% of training, then (0,1,1).
pub fn stage_schedule(epoch: usize, config: &TrainConfig) -> LossWeights {
    if epoch <= config.stage_switch_epoch() {
        LossWeights {
            omega: 1.0,
            beta: 0.0,
            gamma: 0.0,
        }
    } else {
        LossWeights {
            omega: 0.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

/// Eq 12: l_s + omega * l_cr + beta * l_emin + gamma * l_emax.
pub fn total_loss(
    weights: &LossWeights,
    l_s: f64,
    l_cr: f64,
    l_emin: f64,
    l_emax: f64,
) -> Result<f64> {
    let total = l_s + weights.omega * l_cr + weights.beta * l_emin + weights.gamma * l_emax;
    if !total.is_finite() {
        return Err(Error::TrainingDiverged(format!(
            "non-finite total loss ({l_s}, {l_cr}, {l_emin}, {l_emax})"
        )));
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Supervised loss (Eq 1)
// ---------------------------------------------------------------------------

/// Mean cross-entropy of one-hot labels against the model's softmax output.
pub fn supervised_loss(params: &ParameterSet, batch: &[(Vec<f64>, usize)]) -> Result<f64> {
    Ok(supervised(params, batch, None)?.0)
}

pub fn supervised_loss_grad(
    params: &ParameterSet,
    batch: &[(Vec<f64>, usize)],
) -> Result<(f64, GradientSet)> {
    let mut grads = GradientSet::zeros_like(params);
    let (loss, _) = supervised(params, batch, Some(&mut grads))?;
    Ok((loss, grads))
}

fn supervised(
    params: &ParameterSet,
    batch: &[(Vec<f64>, usize)],
    mut grads: Option<&mut GradientSet>,
) -> Result<(f64, ())> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty labeled batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (x, y) in batch {
        let cache = nn::forward_cached(params, x)?;
        let q = nn::softmax_t_slice(cache.logits(), 1.0);
        if *y >= q.len() {
            return Err(Error::InvalidArgument(format!("label {y} out of range")));
        }
        loss -= scale * math::ln_floored(q[*y]);
        if let Some(g) = grads.as_deref_mut() {
            let mut dz: Vec<f64> = q.iter().map(|&p| scale * p).collect();
            dz[*y] -= scale;
            nn::backward(params, &cache, &dz, g);
        }
    }
    Ok((loss, ()))
}

// ---------------------------------------------------------------------------
// Consistency loss (Eq 2)
// ---------------------------------------------------------------------------

/// The two augmented views of an unlabeled batch, frozen so the loss becomes
/// a pure function of the parameters.
#[derive(Clone, Debug)]
pub struct ConsistencyBatch {
    pub weak: Vec<Vec<f64>>,
    pub strong: Vec<Vec<f64>>,
}

pub fn prepare_consistency_batch<R: Rng>(
    batch: &[Vec<f64>],
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> ConsistencyBatch {
    let weak = batch
        .iter()
        .map(|x| augment::weak_augment(x, policy.weak_sigma, rng))
        .collect();
    let strong = batch
        .iter()
        .map(|x| augment::rand_transform(x, policy, rng))
        .collect();
    ConsistencyBatch { weak, strong }
}

/// The temperature-scaled soft targets of Eq 2, computed without gradient.
pub fn consistency_targets(
    params: &ParameterSet,
    weak: &[Vec<f64>],
    t: f64,
) -> Result<Vec<Probs>> {
    weak.iter()
        .map(|x| nn::softmax_with_temperature(&nn::forward(params, x)?, t))
        .collect()
}

/// Mean CE of the frozen targets against the strong-view predictions.
pub fn consistency_loss_with_targets(
    params: &ParameterSet,
    strong: &[Vec<f64>],
    targets: &[Probs],
) -> Result<f64> {
    Ok(consistency_inner(params, strong, targets, None)?)
}

pub fn consistency_loss_grad(
    params: &ParameterSet,
    batch: &ConsistencyBatch,
    t: f64,
) -> Result<(f64, GradientSet)> {
    let targets = consistency_targets(params, &batch.weak, t)?;
    let mut grads = GradientSet::zeros_like(params);
    let loss = consistency_inner(params, &batch.strong, &targets, Some(&mut grads))?;
    Ok((loss, grads))
}

/// Eq 2 end to end: draw both augmentations and evaluate.
pub fn consistency_loss<R: Rng>(
    params: &ParameterSet,
    batch: &[Vec<f64>],
    t: f64,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty unlabeled batch".into()));
    }
    let prepared = prepare_consistency_batch(batch, policy, rng);
    let targets = consistency_targets(params, &prepared.weak, t)?;
    consistency_loss_with_targets(params, &prepared.strong, &targets)
}

fn consistency_inner(
    params: &ParameterSet,
    strong: &[Vec<f64>],
    targets: &[Probs],
    mut grads: Option<&mut GradientSet>,
) -> Result<f64> {
    if strong.is_empty() {
        return Err(Error::InvalidArgument("empty unlabeled batch".into()));
    }
    if strong.len() != targets.len() {
        return Err(Error::InvalidArgument(
            "targets and inputs disagree in length".into(),
        ));
    }
    let scale = 1.0 / strong.len() as f64;
    let mut loss = 0.0;
    for (x, target) in strong.iter().zip(targets) {
        let cache = nn::forward_cached(params, x)?;
        let q = nn::softmax_t_slice(cache.logits(), 1.0);
        for (&ti, &qi) in target.values().iter().zip(&q) {
            if ti > 0.0 {
                loss -= scale * ti * math::ln_floored(qi);
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            let dz: Vec<f64> = q
                .iter()
                .zip(target.values())
                .map(|(&qi, &ti)| scale * (qi - ti))
                .collect();
            nn::backward(params, &cache, &dz, g);
        }
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Entropy losses over the selected subsets (Eq 10, Eq 11)
// ---------------------------------------------------------------------------

/// Frozen inputs for the entropy-minimization loss: the original selected
/// samples (pseudo-label source) and their mixed counterparts.
#[derive(Clone, Debug)]
pub struct EntropyBatch {
    pub base: Vec<Vec<f64>>,
    pub mixed: Vec<Vec<f64>>,
    /// |B_U|, the Eq 10/11 normalizer.
    pub batch_size: usize,
}

/// Build the augmented inputs for the selected samples of one batch. The
/// mixup partner is drawn uniformly from the whole unlabeled batch.
pub fn prepare_entropy_batch<R: Rng>(
    batch: &[Vec<f64>],
    selected: &[usize],
    lambda_prime: f64,
    policy: &AugmentationPolicy,
    mixup_mode: MixupMode,
    selection_augment: bool,
    rng: &mut R,
) -> Result<EntropyBatch> {
    let mut base = Vec::with_capacity(selected.len());
    let mut mixed = Vec::with_capacity(selected.len());
    for &i in selected {
        let x = &batch[i];
        let x_tilde = if !selection_augment {
            x.clone()
        } else {
            match mixup_mode {
                MixupMode::Off => augment::rand_transform(x, policy, rng),
                MixupMode::Modified => {
                    let partner = &batch[rng.random_range(0..batch.len())];
                    augment::modified_mixup(x, partner, lambda_prime, policy, rng)?
                }
                MixupMode::Vanilla => {
                    let partner = &batch[rng.random_range(0..batch.len())];
                    let rx = augment::rand_transform(x, policy, rng);
                    let rp = augment::rand_transform(partner, policy, rng);
                    rx.iter()
                        .zip(&rp)
                        .map(|(a, b)| lambda_prime * a + (1.0 - lambda_prime) * b)
                        .collect()
                }
            }
        };
        base.push(x.clone());
        mixed.push(x_tilde);
    }
    Ok(EntropyBatch {
        base,
        mixed,
        batch_size: batch.len(),
    })
}

/// One-hot pseudo-labels: the argmax prediction on the original samples,
/// evaluated without gradient.
pub fn pseudo_labels(params: &ParameterSet, base: &[Vec<f64>]) -> Result<Vec<usize>> {
    base.iter()
        .map(|x| Ok(nn::argmax(nn::forward(params, x)?.values())))
        .collect()
}

/// Eq 10 with frozen pseudo-labels: sum of CE(one-hot y-hat || q(x-tilde))
/// over the selected samples, divided by |B_U|.
pub fn entropy_min_with_labels(
    params: &ParameterSet,
    mixed: &[Vec<f64>],
    labels: &[usize],
    batch_size: usize,
) -> Result<f64> {
    entropy_min_inner(params, mixed, labels, batch_size, None)
}

pub fn entropy_min_loss_grad(
    params: &ParameterSet,
    batch: &EntropyBatch,
) -> Result<(f64, GradientSet)> {
    let labels = pseudo_labels(params, &batch.base)?;
    let mut grads = GradientSet::zeros_like(params);
    let loss = entropy_min_inner(params, &batch.mixed, &labels, batch.batch_size, Some(&mut grads))?;
    Ok((loss, grads))
}

/// Eq 10 end to end for one batch.
pub fn entropy_min_loss<R: Rng>(
    params: &ParameterSet,
    batch: &[Vec<f64>],
    selected: &[usize],
    lambda_prime: f64,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<f64> {
    let prepared = prepare_entropy_batch(
        batch,
        selected,
        lambda_prime,
        policy,
        MixupMode::Modified,
        true,
        rng,
    )?;
    let labels = pseudo_labels(params, &prepared.base)?;
    entropy_min_with_labels(params, &prepared.mixed, &labels, prepared.batch_size)
}

fn entropy_min_inner(
    params: &ParameterSet,
    mixed: &[Vec<f64>],
    labels: &[usize],
    batch_size: usize,
    mut grads: Option<&mut GradientSet>,
) -> Result<f64> {
    if mixed.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / batch_size as f64;
    let mut loss = 0.0;
    for (x, &y) in mixed.iter().zip(labels) {
        let cache = nn::forward_cached(params, x)?;
        let q = nn::softmax_t_slice(cache.logits(), 1.0);
        loss -= scale * math::ln_floored(q[y]);
        if let Some(g) = grads.as_deref_mut() {
            let mut dz: Vec<f64> = q.iter().map(|&p| scale * p).collect();
            dz[y] -= scale;
            nn::backward(params, &cache, &dz, g);
        }
    }
    Ok(loss)
}

/// Eq 11 over frozen mixed inputs: minus the entropy sum over the selected
/// OOD samples divided by |B_U|. Always <= 0.
pub fn entropy_max_with_inputs(
    params: &ParameterSet,
    mixed: &[Vec<f64>],
    batch_size: usize,
) -> Result<f64> {
    entropy_max_inner(params, mixed, batch_size, None)
}

pub fn entropy_max_loss_grad(
    params: &ParameterSet,
    batch: &EntropyBatch,
) -> Result<(f64, GradientSet)> {
    let mut grads = GradientSet::zeros_like(params);
    let loss = entropy_max_inner(params, &batch.mixed, batch.batch_size, Some(&mut grads))?;
    Ok((loss, grads))
}

/// Eq 11 end to end for one batch.
pub fn entropy_max_loss<R: Rng>(
    params: &ParameterSet,
    batch: &[Vec<f64>],
    selected: &[usize],
    lambda_prime: f64,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<f64> {
    let prepared = prepare_entropy_batch(
        batch,
        selected,
        lambda_prime,
        policy,
        MixupMode::Modified,
        true,
        rng,
    )?;
    entropy_max_with_inputs(params, &prepared.mixed, prepared.batch_size)
}

fn entropy_max_inner(
    params: &ParameterSet,
    mixed: &[Vec<f64>],
    batch_size: usize,
    mut grads: Option<&mut GradientSet>,
) -> Result<f64> {
    if mixed.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / batch_size as f64;
    let mut loss = 0.0;
    for x in mixed {
        let cache = nn::forward_cached(params, x)?;
        let q = nn::softmax_t_slice(cache.logits(), 1.0);
        let mut h = 0.0;
        for &qi in &q {
            if qi > 0.0 {
                h -= qi * math::ln(qi);
            }
        }
        loss -= scale * h;
        if let Some(g) = grads.as_deref_mut() {
            // d(-H)/dz_i = q_i (ln q_i + H)
            let dz: Vec<f64> = q
                .iter()
                .map(|&qi| scale * qi * (math::ln_floored(qi) + h))
                .collect();
            nn::backward(params, &cache, &dz, g);
        }
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// The training loop (Algorithm 1)
// ---------------------------------------------------------------------------

/// One completed epoch of diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub t_t: f64,
    pub tau_in: Option<f64>,
    pub tau_out: Option<f64>,
    pub n_sel_in: usize,
    pub n_sel_out: usize,
    pub loss_s: f64,
    pub loss_cr: f64,
    pub loss_emin: f64,
    pub loss_emax: f64,
    pub sel_prf_in: Option<PrfResult>,
    pub sel_prf_out: Option<PrfResult>,
    pub auroc_u: Option<f64>,
}

/// One row per completed epoch.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
}

/// Trained parameters plus the diagnostic trace.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ParameterSet,
    pub ema: ParameterSet,
    pub trace: TrainingTrace,
    /// Set when the divergence guard fired; the trace holds the last good
    /// epochs.
    pub diverged_at: Option<usize>,
}

const DIVERGENCE_CAP: f64 = 1e6;

/// Confidence scores of a feature list at temperature `t`.
pub fn confidence_scores(params: &ParameterSet, xs: &[Vec<f64>], t: f64) -> Result<Vec<f64>> {
    xs.iter()
        .map(|x| nn::confidence_score(&nn::forward(params, x)?, t))
        .collect()
}

fn class_count(bundle: &DatasetBundle) -> Result<usize> {
    let max_label = bundle
        .labeled
        .iter()
        .chain(&bundle.validation)
        .chain(&bundle.test_id)
        .filter_map(|s| s.label)
        .max()
        .ok_or_else(|| Error::InvalidArgument("no labeled samples".into()))?;
    Ok((max_label + 1).max(2))
}

/// Run Algorithm 1: per epoch, calibrate T_t, obtain thresholds, iterate
/// batches over the four losses, update with SGD and EMA.
pub fn train(config: &TrainConfig, bundle: &DatasetBundle) -> Result<TrainOutput> {
    config.validate()?;
    if bundle.labeled.is_empty() || bundle.unlabeled.is_empty() {
        return Err(Error::InvalidArgument(
            "labeled and unlabeled sets must be nonempty".into(),
        ));
    }
    if bundle.validation.is_empty() {
        return Err(Error::InvalidArgument("validation set must be nonempty".into()));
    }

    let k = class_count(bundle)?;
    let d = bundle.labeled[0].features.len();
    let mut dims = vec![d];
    dims.extend_from_slice(&config.hidden_layers);
    dims.push(k);

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x141));
    let mut params = ParameterSet::init(&dims, nn::Activation::default(), &mut init_rng)?;
    let mut ema = EmaState::new(&params, config.ema_decay)?;
    let mut momentum_buf = GradientSet::zeros_like(&params);

    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xA06));
    let mut mix_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x717));

    let labeled = bundle.labeled_pairs();
    let validation = bundle.validation_pairs();
    let u_features = bundle.unlabeled_features();
    let u_truth = bundle.unlabeled_truth();
    let calib_cfg = config.calibration();

    let mut trace = TrainingTrace::default();

    for epoch in 1..=config.epochs {
        let weights = stage_schedule(epoch, config);

        // Alg 1 line 2: per-epoch temperature
        let t_t = if epoch <= config.temperature_warmup_epochs {
            1.0
        } else if config.adaptive_temperature {
            calibrate_temperature(&params, &validation, &calib_cfg)?.temperature
        } else {
            config.fixed_temperature
        };

        // Alg 1 line 3: per-epoch scores and thresholds on all of U
        let scores = confidence_scores(&params, &u_features, t_t)?;
        let mut thresholds: Option<ThresholdPair> = None;
        let mut sel: Option<SelectionResult> = None;
        if weights.beta > 0.0 && !config.supervised_only {
            let pair = match config.threshold_mode {
                ThresholdMode::Fixed { tau_in, tau_out } => Some(ThresholdPair {
                    tau_in,
                    tau_out,
                    clamped_in: false,
                    clamped_out: false,
                }),
                ThresholdMode::DynamicGmm => {
                    match selection::fit_gmm_1d(&scores, 200, 1e-6) {
                        Ok(fit) => match selection::compute_thresholds(&fit.model, &scores, k) {
                            Ok(pair) => Some(pair),
                            Err(Error::DegenerateDistribution(_)) => None,
                            Err(e) => return Err(e),
                        },
                        Err(Error::DegenerateDistribution(_))
                        | Err(Error::InsufficientData(_)) => None,
                        Err(e) => return Err(e),
                    }
                }
            };
            if let Some(pair) = pair {
                sel = Some(selection::select_in_out(&scores, &pair));
                thresholds = Some(pair);
            }
        }

        // membership masks over U for per-batch filtering
        let mut in_mask = vec![false; u_features.len()];
        let mut out_mask = vec![false; u_features.len()];
        if let Some(s) = &sel {
            for &i in &s.in_indices {
                in_mask[i] = true;
            }
            for &i in &s.out_indices {
                out_mask[i] = true;
            }
        }

        let batches = data::make_batches(
            labeled.len(),
            u_features.len(),
            config.batch_l,
            config.batch_u,
            config.iterations_per_epoch,
            config.seed,
            epoch,
        )?;

        let mut sums = [0.0f64; 4];
        let mut diverged = false;
        for (bl_idx, bu_idx) in &batches {
            let batch_l: Vec<(Vec<f64>, usize)> =
                bl_idx.iter().map(|&i| labeled[i].clone()).collect();
            let batch_u: Vec<Vec<f64>> =
                bu_idx.iter().map(|&i| u_features[i].clone()).collect();

            let (l_s, g_s) = supervised_loss_grad(&params, &batch_l)?;
            let mut total_grad = g_s;

            let mut l_cr = 0.0;
            let mut l_emin = 0.0;
            let mut l_emax = 0.0;

            if !config.supervised_only {
                let prepared = prepare_consistency_batch(&batch_u, &config.policy, &mut aug_rng);
                if weights.omega > 0.0 {
                    let (v, g) = consistency_loss_grad(&params, &prepared, t_t)?;
                    l_cr = v;
                    total_grad.scaled_add(&g, weights.omega);
                } else {
                    let targets = consistency_targets(&params, &prepared.weak, t_t)?;
                    l_cr = consistency_loss_with_targets(&params, &prepared.strong, &targets)?;
                }

                if weights.beta > 0.0 && sel.is_some() {
                    let sel_in: Vec<usize> = (0..batch_u.len())
                        .filter(|&j| in_mask[bu_idx[j]])
                        .collect();
                    let sel_out: Vec<usize> = (0..batch_u.len())
                        .filter(|&j| out_mask[bu_idx[j]])
                        .collect();
                    let lambda_prime = match config.mixup_mode {
                        MixupMode::Modified => augment::sample_lambda(&config.mixup, &mut mix_rng)?,
                        MixupMode::Vanilla => {
                            let l = augment::sample_lambda(&config.mixup, &mut mix_rng)?;
                            // undo the max rule half the time to recover the raw draw
                            if mix_rng.random::<bool>() {
                                1.0 - l
                            } else {
                                l
                            }
                        }
                        MixupMode::Off => 1.0,
                    };

                    let eb_in = prepare_entropy_batch(
                        &batch_u,
                        &sel_in,
                        lambda_prime,
                        &config.policy,
                        config.mixup_mode,
                        config.selection_augment,
                        &mut mix_rng,
                    )?;
                    let (v, g) = entropy_min_loss_grad(&params, &eb_in)?;
                    l_emin = v;
                    total_grad.scaled_add(&g, weights.beta);

                    let eb_out = prepare_entropy_batch(
                        &batch_u,
                        &sel_out,
                        lambda_prime,
                        &config.policy,
                        config.mixup_mode,
                        config.selection_augment,
                        &mut mix_rng,
                    )?;
                    let (v, g) = entropy_max_loss_grad(&params, &eb_out)?;
                    l_emax = v;
                    total_grad.scaled_add(&g, weights.gamma);
                }
            }

            let total = total_loss(&weights, l_s, l_cr, l_emin, l_emax)?;
            if !total.is_finite() || math::abs(total) > DIVERGENCE_CAP {
                diverged = true;
                break;
            }
            sums[0] += l_s;
            sums[1] += l_cr;
            sums[2] += l_emin;
            sums[3] += l_emax;

            if let Err(Error::TrainingDiverged(_)) = nn::sgd_step(
                &mut params,
                &total_grad,
                &mut momentum_buf,
                config.lr,
                config.momentum,
                config.weight_decay,
            ) {
                diverged = true;
                break;
            }
            ema.update(&params)?;
        }

        if diverged {
            return Ok(TrainOutput {
                params,
                ema: ema.shadow,
                trace,
                diverged_at: Some(epoch),
            });
        }

        // diagnostics against the hidden flags (never fed back into losses)
        let id_scores: Vec<f64> = scores
            .iter()
            .zip(&u_truth)
            .filter(|(_, t)| **t == OodTruth::Id)
            .map(|(s, _)| *s)
            .collect();
        let ood_scores: Vec<f64> = scores
            .iter()
            .zip(&u_truth)
            .filter(|(_, t)| **t != OodTruth::Id)
            .map(|(s, _)| *s)
            .collect();
        let auroc_u = if !id_scores.is_empty() && !ood_scores.is_empty() {
            Some(metrics::auroc(&ScoreSet::new(id_scores, ood_scores)?))
        } else {
            None
        };

        let n = config.iterations_per_epoch as f64;
        trace.epochs.push(EpochRecord {
            epoch,
            t_t,
            tau_in: thresholds.map(|t| t.tau_in),
            tau_out: thresholds.map(|t| t.tau_out),
            n_sel_in: sel.as_ref().map_or(0, |s| s.in_indices.len()),
            n_sel_out: sel.as_ref().map_or(0, |s| s.out_indices.len()),
            loss_s: sums[0] / n,
            loss_cr: sums[1] / n,
            loss_emin: sums[2] / n,
            loss_emax: sums[3] / n,
            sel_prf_in: sel
                .as_ref()
                .map(|s| metrics::selection_prf(s, &u_truth, SelectionSide::Id)),
            sel_prf_out: sel
                .as_ref()
                .map(|s| metrics::selection_prf(s, &u_truth, SelectionSide::Ood)),
            auroc_u,
        });
    }

    Ok(TrainOutput {
        params,
        ema: ema.shadow,
        trace,
        diverged_at: None,
    })
}
