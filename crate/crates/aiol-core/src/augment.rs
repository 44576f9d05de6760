//! Weak/strong augmentation for vector data and the modified mixup with
//! lambda' = max(lambda, 1 - lambda).

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Strong-augmentation operation pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrongOp {
    GaussianJitter,
    GlobalScale,
    /// Only applicable to d = 2 inputs; silently excluded otherwise.
    Rotation,
    CoordinateDropout,
}

impl StrongOp {
    pub const ALL: [StrongOp; 4] = [
        StrongOp::GaussianJitter,
        StrongOp::GlobalScale,
        StrongOp::Rotation,
        StrongOp::CoordinateDropout,
    ];
}

/// Weak and strong augmentation parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    /// Std of the weak Gaussian jitter.
    pub weak_sigma: f64,
    /// Strong-op pool; rotation is skipped unless d = 2.
    pub ops: Vec<StrongOp>,
    /// Number of strong ops composed per call.
    pub n_ops: usize,
    /// Strong-op magnitude in [0, 1].
    pub magnitude: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            weak_sigma: 0.05,
            ops: StrongOp::ALL.to_vec(),
            n_ops: 2,
            magnitude: 0.5,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.n_ops == 0 {
            return Err(Error::InvalidArgument("n_ops must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.magnitude) {
            return Err(Error::InvalidArgument(format!(
                "magnitude must lie in [0,1], got {}",
                self.magnitude
            )));
        }
        if self.ops.is_empty() {
            return Err(Error::InvalidArgument("empty strong-op pool".into()));
        }
        Ok(())
    }
}

/// Beta(alpha, alpha) mixup with the max rule.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MixupConfig {
    pub alpha: f64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self { alpha: 0.2 }
    }
}

/// Weak augmentation: additive Gaussian noise of scale sigma_w.
pub fn weak_augment<R: Rng>(x: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let eps: f64 = StandardNormal.sample(rng);
            v + sigma * eps
        })
        .collect()
}

/// Std of the strong Gaussian jitter at magnitude 1.
const JITTER_SCALE: f64 = 0.5;
/// Rotation angle span at magnitude 1, in radians.
const ROTATION_SPAN: f64 = core::f64::consts::PI;

fn apply_op<R: Rng>(op: StrongOp, x: &mut Vec<f64>, magnitude: f64, rng: &mut R) {
    match op {
        StrongOp::GaussianJitter => {
            for v in x.iter_mut() {
                let eps: f64 = StandardNormal.sample(rng);
                *v += magnitude * JITTER_SCALE * eps;
            }
        }
        StrongOp::GlobalScale => {
            // norm scaled by a factor in [1 - m/2, 1 + m/2]
            let factor = 1.0 + magnitude * (rng.random::<f64>() - 0.5);
            for v in x.iter_mut() {
                *v *= factor;
            }
        }
        StrongOp::Rotation => {
            let angle = magnitude * ROTATION_SPAN * (2.0 * rng.random::<f64>() - 1.0);
            let (s, c) = (math::sin(angle), math::cos(angle));
            let (x0, x1) = (x[0], x[1]);
            x[0] = c * x0 - s * x1;
            x[1] = s * x0 + c * x1;
        }
        StrongOp::CoordinateDropout => {
            let idx = rng.random_range(0..x.len());
            x[idx] *= 1.0 - magnitude;
        }
    }
}

/// Strong augmentation: compose `n_ops` operations drawn uniformly from the
/// pool, each at the policy magnitude.
pub fn rand_transform<R: Rng>(x: &[f64], policy: &AugmentationPolicy, rng: &mut R) -> Vec<f64> {
    let pool: Vec<StrongOp> = policy
        .ops
        .iter()
        .copied()
        .filter(|op| *op != StrongOp::Rotation || x.len() == 2)
        .collect();
    let mut out = x.to_vec();
    if pool.is_empty() {
        return out;
    }
    for _ in 0..policy.n_ops {
        let op = pool[rng.random_range(0..pool.len())];
        apply_op(op, &mut out, policy.magnitude, rng);
    }
    out
}

/// Draw lambda from Beta(alpha, alpha) and return lambda' = max(lambda,
/// 1 - lambda), always in [0.5, 1].
pub fn sample_lambda<R: Rng>(config: &MixupConfig, rng: &mut R) -> Result<f64> {
    if !(config.alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mixup alpha must be positive, got {}",
            config.alpha
        )));
    }
    let beta = Beta::new(config.alpha, config.alpha)
        .map_err(|e| Error::InvalidArgument(format!("beta sampler: {e}")))?;
    let lambda: f64 = beta.sample(rng);
    Ok(lambda.max(1.0 - lambda))
}

/// Modified mixup: lambda' * R(x) + (1 - lambda') * R(x').
pub fn modified_mixup<R: Rng>(
    x: &[f64],
    x_prime: &[f64],
    lambda_prime: f64,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if x.len() != x_prime.len() {
        return Err(Error::InvalidArgument(format!(
            "mixup dimension mismatch: {} vs {}",
            x.len(),
            x_prime.len()
        )));
    }
    if !(0.5..=1.0).contains(&lambda_prime) {
        return Err(Error::InvalidArgument(format!(
            "lambda' must lie in [0.5, 1], got {lambda_prime}"
        )));
    }
    let rx = rand_transform(x, policy, rng);
    let rxp = rand_transform(x_prime, policy, rng);
    Ok(rx
        .iter()
        .zip(&rxp)
        .map(|(a, b)| lambda_prime * a + (1.0 - lambda_prime) * b)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_magnitude_policy() -> AugmentationPolicy {
        AugmentationPolicy {
            weak_sigma: 0.0,
            ops: StrongOp::ALL.to_vec(),
            n_ops: 2,
            magnitude: 0.0,
        }
    }

    #[test]
    fn weak_augment_identity_at_zero_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = [1.0, -2.0, 0.5];
        assert_eq!(weak_augment(&x, 0.0, &mut rng), x.to_vec());
    }

    #[test]
    fn weak_augment_reproducible() {
        let x = [0.3, 0.7];
        let a = weak_augment(&x, 0.1, &mut ChaCha8Rng::seed_from_u64(5));
        let b = weak_augment(&x, 0.1, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn weak_augment_perturbation_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = [0.0; 3];
        let sigma = 0.2;
        let n = 10_000;
        let mut total = 0.0;
        for _ in 0..n {
            let y = weak_augment(&x, sigma, &mut rng);
            total += y.iter().map(|v| v * v).sum::<f64>();
        }
        let expected = 3.0 * sigma * sigma;
        let got = total / n as f64;
        assert!((got - expected).abs() < 0.05 * expected, "{got} vs {expected}");
    }

    #[test]
    fn rand_transform_identity_at_zero_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let policy = zero_magnitude_policy();
        let x = [1.5, -0.5];
        for _ in 0..20 {
            assert_eq!(rand_transform(&x, &policy, &mut rng), x.to_vec());
        }
    }

    #[test]
    fn dropout_at_full_magnitude_zeroes_a_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let policy = AugmentationPolicy {
            weak_sigma: 0.0,
            ops: alloc::vec![StrongOp::CoordinateDropout],
            n_ops: 1,
            magnitude: 1.0,
        };
        let x = [1.0, 2.0, 3.0];
        let y = rand_transform(&x, &policy, &mut rng);
        let zeros = y.iter().filter(|v| **v == 0.0).count();
        assert_eq!(zeros, 1);
    }

    #[test]
    fn global_scale_factor_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 0.8;
        let policy = AugmentationPolicy {
            weak_sigma: 0.0,
            ops: alloc::vec![StrongOp::GlobalScale],
            n_ops: 1,
            magnitude: m,
        };
        let x = [3.0, 4.0]; // norm 5
        for _ in 0..1000 {
            let y = rand_transform(&x, &policy, &mut rng);
            let norm = math::sqrt(y.iter().map(|v| v * v).sum::<f64>());
            let factor = norm / 5.0;
            assert!(factor >= 1.0 - m / 2.0 - 1e-12 && factor <= 1.0 + m / 2.0 + 1e-12);
        }
    }

    #[test]
    fn rotation_excluded_for_non_planar_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let policy = AugmentationPolicy {
            weak_sigma: 0.0,
            ops: alloc::vec![StrongOp::Rotation],
            n_ops: 3,
            magnitude: 1.0,
        };
        let x = [1.0, 2.0, 3.0];
        // rotation is the only pool entry and d != 2, so nothing applies
        assert_eq!(rand_transform(&x, &policy, &mut rng), x.to_vec());
    }

    #[test]
    fn rotation_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let policy = AugmentationPolicy {
            weak_sigma: 0.0,
            ops: alloc::vec![StrongOp::Rotation],
            n_ops: 1,
            magnitude: 1.0,
        };
        let x = [3.0, 4.0];
        for _ in 0..100 {
            let y = rand_transform(&x, &policy, &mut rng);
            let norm = math::sqrt(y[0] * y[0] + y[1] * y[1]);
            assert!((norm - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lambda_respects_max_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = MixupConfig { alpha: 0.2 };
        for _ in 0..100_000 {
            let l = sample_lambda(&cfg, &mut rng).unwrap();
            assert!((0.5..=1.0).contains(&l), "lambda' = {l}");
        }
    }

    #[test]
    fn lambda_mean_for_uniform_alpha() {
        // alpha = 1 gives uniform lambda, so E[max(u, 1-u)] = 3/4
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = MixupConfig { alpha: 1.0 };
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_lambda(&cfg, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.75).abs() < 0.01, "mean = {mean}");
    }

    #[test]
    fn mixup_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let policy = zero_magnitude_policy();
        let x = [1.0, 0.0];
        let xp = [0.0, 1.0];
        let full = modified_mixup(&x, &xp, 1.0, &policy, &mut rng).unwrap();
        assert_eq!(full, x.to_vec());
        let mid = modified_mixup(&x, &xp, 0.5, &policy, &mut rng).unwrap();
        assert_eq!(mid, alloc::vec![0.5, 0.5]);
        let seventy = modified_mixup(&x, &xp, 0.7, &policy, &mut rng).unwrap();
        assert!((seventy[0] - 0.7).abs() < 1e-15);
        assert!((seventy[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn mixup_rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let policy = zero_magnitude_policy();
        assert!(modified_mixup(&[1.0], &[1.0, 2.0], 0.7, &policy, &mut rng).is_err());
    }

    #[test]
    fn mixup_closer_to_x_with_zero_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let policy = zero_magnitude_policy();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let xp: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let l: f64 = rng.random_range(0.5..1.0);
            let mixed = modified_mixup(&x, &xp, l, &policy, &mut rng).unwrap();
            let d = |a: &[f64], b: &[f64]| {
                a.iter()
                    .zip(b)
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum::<f64>()
            };
            assert!(d(&mixed, &x) <= d(&mixed, &xp) + 1e-15);
        }
    }
}
