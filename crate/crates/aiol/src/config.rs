//! TOML experiment configuration with strict (unknown-key-rejecting)
//! parsing, defaults matching the library, and a stable content hash that
//! ties checkpoints to the configuration that produced them.

use std::path::Path;

use aiol_core::augment::{AugmentationPolicy, MixupConfig, StrongOp};
use aiol_core::data::{SyntheticFamily, SyntheticSpec, UnseenFamily};
use aiol_core::trainer::{MixupMode, ThresholdMode, TrainConfig};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seeds to run; overridable with --seed.
    pub seeds: Vec<u64>,
    pub data: DataSection,
    pub train: TrainSection,
    pub augment: AugmentSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            data: DataSection::default(),
            train: TrainSection::default(),
            augment: AugmentSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, rename_all = "kebab-case")]
pub struct DataSection {
    pub family: SyntheticFamily,
    pub dim: usize,
    pub classes: usize,
    pub n_per_class: usize,
    pub m_in: usize,
    pub m_out: usize,
    pub noise: f64,
    pub label_flip: f64,
    pub unseen_family: UnseenFamily,
    pub n_test_id: usize,
    pub n_test_seen: usize,
    pub n_test_unseen: usize,
    /// Seed of the synthetic generator (independent of the run seeds).
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            family: s.family,
            dim: s.d,
            classes: s.k,
            n_per_class: s.n_per_class,
            m_in: s.m_in,
            m_out: s.m_out,
            noise: s.noise,
            label_flip: s.label_flip,
            unseen_family: s.unseen_family,
            n_test_id: s.n_test_id,
            n_test_seen: s.n_test_seen,
            n_test_unseen: s.n_test_unseen,
            seed: s.seed,
        }
    }
}

impl DataSection {
    pub fn to_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            family: self.family,
            d: self.dim,
            k: self.classes,
            n_per_class: self.n_per_class,
            m_in: self.m_in,
            m_out: self.m_out,
            noise: self.noise,
            label_flip: self.label_flip,
            unseen_family: self.unseen_family,
            n_test_id: self.n_test_id,
            n_test_seen: self.n_test_seen,
            n_test_unseen: self.n_test_unseen,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, rename_all = "kebab-case")]
pub struct TrainSection {
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
    pub hidden_layers: Vec<usize>,
    pub t_min: f64,
    pub t_max: f64,
    pub t_tol: f64,
    pub supervised_only: bool,
    pub adaptive_temperature: bool,
    pub fixed_temperature: f64,
    /// "dynamic-gmm" or "fixed" (the latter uses fixed_tau_in/out).
    pub threshold_mode: ThresholdModeName,
    pub fixed_tau_in: f64,
    pub fixed_tau_out: f64,
    pub mixup_mode: MixupMode,
    pub selection_augment: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdModeName {
    DynamicGmm,
    Fixed,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::desk_scale(0);
        Self {
            epochs: t.epochs,
            iterations_per_epoch: t.iterations_per_epoch,
            stage_switch_fraction: t.stage_switch_fraction,
            temperature_warmup_epochs: t.temperature_warmup_epochs,
            batch_l: t.batch_l,
            batch_u: t.batch_u,
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            ema_decay: t.ema_decay,
            hidden_layers: t.hidden_layers,
            t_min: t.t_min,
            t_max: t.t_max,
            t_tol: t.t_tol,
            supervised_only: false,
            adaptive_temperature: true,
            fixed_temperature: 1.0,
            threshold_mode: ThresholdModeName::DynamicGmm,
            fixed_tau_in: 0.9,
            fixed_tau_out: 0.3,
            mixup_mode: MixupMode::Modified,
            selection_augment: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, rename_all = "kebab-case")]
pub struct AugmentSection {
    pub weak_sigma: f64,
    pub ops: Vec<StrongOp>,
    pub n_ops: usize,
    pub magnitude: f64,
    pub mixup_alpha: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let p = AugmentationPolicy::default();
        Self {
            weak_sigma: p.weak_sigma,
            ops: p.ops,
            n_ops: p.n_ops,
            magnitude: p.magnitude,
            mixup_alpha: MixupConfig::default().alpha,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, rename_all = "kebab-case")]
pub struct EvalSection {
    /// Detection temperature; the final detector scores at T = 1.
    pub temperature: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { temperature: 1.0 }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("config error: seeds must be nonempty");
        }
        self.data
            .to_spec()
            .validate()
            .map_err(|e| anyhow::anyhow!("config error in [data]: {e}"))?;
        self.train_config(0)
            .validate()
            .map_err(|e| anyhow::anyhow!("config error in [train]/[augment]: {e}"))?;
        if !(self.eval.temperature > 0.0) {
            bail!("config error in [eval]: temperature must be positive");
        }
        Ok(())
    }

    pub fn policy(&self) -> AugmentationPolicy {
        AugmentationPolicy {
            weak_sigma: self.augment.weak_sigma,
            ops: self.augment.ops.clone(),
            n_ops: self.augment.n_ops,
            magnitude: self.augment.magnitude,
        }
    }

    /// The core TrainConfig for one run seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            iterations_per_epoch: t.iterations_per_epoch,
            stage_switch_fraction: t.stage_switch_fraction,
            temperature_warmup_epochs: t.temperature_warmup_epochs,
            batch_l: t.batch_l,
            batch_u: t.batch_u,
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            ema_decay: t.ema_decay,
            mixup: MixupConfig {
                alpha: self.augment.mixup_alpha,
            },
            mixup_mode: t.mixup_mode,
            policy: self.policy(),
            hidden_layers: t.hidden_layers.clone(),
            seed,
            t_min: t.t_min,
            t_max: t.t_max,
            t_tol: t.t_tol,
            supervised_only: t.supervised_only,
            adaptive_temperature: t.adaptive_temperature,
            fixed_temperature: t.fixed_temperature,
            threshold_mode: match t.threshold_mode {
                ThresholdModeName::DynamicGmm => ThresholdMode::DynamicGmm,
                ThresholdModeName::Fixed => ThresholdMode::Fixed {
                    tau_in: t.fixed_tau_in,
                    tau_out: t.fixed_tau_out,
                },
            },
            selection_augment: t.selection_augment,
        }
    }

    /// Hash of the experiment-defining sections ([data], [train],
    /// [augment]); the seed list and [eval] options may vary without
    /// invalidating a checkpoint.
    pub fn content_hash(&self) -> [u8; 32] {
        let canonical = serde_json::json!({
            "data": self.data,
            "train": self.train,
            "augment": self.augment,
        });
        let mut hasher = Sha256::new();
        hasher.update(canonical.to_string().as_bytes());
        hasher.finalize().into()
    }

    pub fn content_hash_hex(&self) -> String {
        self.content_hash().iter().map(|b| format!("{b:02x}")).collect()
    }
}
