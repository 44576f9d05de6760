//! Synthetic dataset generation and labeled/unlabeled/validation/test
//! partitions with hidden OOD ground truth.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Hidden ground truth, visible only to evaluation and diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OodTruth {
    Id,
    #[serde(rename = "seen")]
    SeenOod,
    #[serde(rename = "unseen")]
    UnseenOod,
}

/// One data point: features, optional class label, hidden OOD flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Option<usize>,
    pub ood_truth: OodTruth,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: Option<usize>, ood_truth: OodTruth) -> Result<Self> {
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature".into()));
        }
        if label.is_some() && ood_truth != OodTruth::Id {
            return Err(Error::InvalidArgument(
                "labeled sample must be in-distribution".into(),
            ));
        }
        Ok(Self {
            features,
            label,
            ood_truth,
        })
    }
}

/// The labeled/unlabeled/validation/test partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test_id: Vec<Sample>,
    pub test_seen_ood: Vec<Sample>,
    pub test_unseen_ood: Vec<Sample>,
}

impl DatasetBundle {
    /// Training-facing view of U: features only, no ground truth.
    pub fn unlabeled_features(&self) -> Vec<Vec<f64>> {
        self.unlabeled.iter().map(|s| s.features.clone()).collect()
    }

    /// Diagnostic view of U's hidden flags; never feeds a training loss.
    pub fn unlabeled_truth(&self) -> Vec<OodTruth> {
        self.unlabeled.iter().map(|s| s.ood_truth).collect()
    }

    pub fn labeled_pairs(&self) -> Vec<(Vec<f64>, usize)> {
        self.labeled
            .iter()
            .map(|s| (s.features.clone(), s.label.unwrap()))
            .collect()
    }

    pub fn validation_pairs(&self) -> Vec<(Vec<f64>, usize)> {
        self.validation
            .iter()
            .map(|s| (s.features.clone(), s.label.unwrap()))
            .collect()
    }
}

/// Synthetic family for the ID classes and the seen-OOD component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticFamily {
    GaussianClusters,
    TwoMoonsRing,
}

/// Generator family for the unseen-OOD test split; disjoint from the
/// seen-OOD generator by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnseenFamily {
    /// Uniform samples over a box twice the ID data extent.
    UniformBox,
    /// A far-out ring of twice the seen-OOD radius.
    FarRing,
}

/// Specification of one synthetic bundle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: SyntheticFamily,
    pub d: usize,
    pub k: usize,
    pub n_per_class: usize,
    pub m_in: usize,
    pub m_out: usize,
    pub noise: f64,
    /// Fraction of ID labels swapped to a uniformly random other class.
    /// Label noise keeps validation accuracy below 1, which is what gives the
    /// NLL-calibrated temperature room to rise above 1 on a sharp network.
    pub label_flip: f64,
    pub unseen_family: UnseenFamily,
    pub n_test_id: usize,
    pub n_test_seen: usize,
    pub n_test_unseen: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            family: SyntheticFamily::TwoMoonsRing,
            d: 2,
            k: 2,
            n_per_class: 25,
            m_in: 2000,
            m_out: 2000,
            noise: 0.2,
            label_flip: 0.1,
            unseen_family: UnseenFamily::UniformBox,
            n_test_id: 500,
            n_test_seen: 500,
            n_test_unseen: 500,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument("K must be >= 2".into()));
        }
        if self.d < 2 {
            return Err(Error::InvalidArgument("d must be >= 2".into()));
        }
        if self.family == SyntheticFamily::TwoMoonsRing && self.k != 2 {
            return Err(Error::InvalidArgument(
                "two-moons-ring supports exactly K = 2".into(),
            ));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::InvalidArgument("noise must be nonnegative".into()));
        }
        if !(0.0..=0.5).contains(&self.label_flip) {
            return Err(Error::InvalidArgument(
                "label-flip must be in [0, 0.5]".into(),
            ));
        }
        Ok(())
    }
}

const ID_CLUSTER_RADIUS: f64 = 4.0;
// The two moons are pulled apart vertically so that the seen-OOD ring fits in
// the gap between them. Seen-OOD must sit between the classes, where the
// decision boundary keeps confidence genuinely low: points outside the data
// hull are extrapolated by a piecewise-linear network with growing margins and
// end up *more* confident than the ID data, which inverts detection.
const MOON_SEPARATION: f64 = 1.25;
const SEEN_RING_RADIUS: f64 = 0.6;
const SEEN_RING_CENTER: (f64, f64) = (0.5, 0.25);

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// One ID point of class `c`.
fn id_point<R: Rng>(spec: &SyntheticSpec, c: usize, rng: &mut R) -> Vec<f64> {
    let mut x = alloc::vec![0.0; spec.d];
    match spec.family {
        SyntheticFamily::TwoMoonsRing => {
            // standard two moons in the first two coordinates
            let t = rng.random::<f64>() * core::f64::consts::PI;
            if c == 0 {
                x[0] = math::cos(t);
                x[1] = math::sin(t) + MOON_SEPARATION;
            } else {
                x[0] = 1.0 - math::cos(t);
                x[1] = 0.5 - math::sin(t) - MOON_SEPARATION;
            }
        }
        SyntheticFamily::GaussianClusters => {
            let angle = 2.0 * core::f64::consts::PI * c as f64 / spec.k as f64;
            x[0] = ID_CLUSTER_RADIUS * math::cos(angle);
            x[1] = ID_CLUSTER_RADIUS * math::sin(angle);
        }
    }
    for v in x.iter_mut() {
        *v += spec.noise * normal(rng);
    }
    x
}

/// One seen-OOD point, placed between the classes rather than outside them: a
/// ring in the gap separating the moons, or blobs at the inter-cluster
/// angles. Between-class regions are the only place a discriminative
/// classifier is genuinely uncertain.
fn seen_ood_point<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Vec<f64> {
    let mut x = alloc::vec![0.0; spec.d];
    match spec.family {
        SyntheticFamily::TwoMoonsRing => {
            let t = rng.random::<f64>() * 2.0 * core::f64::consts::PI;
            x[0] = SEEN_RING_CENTER.0 + SEEN_RING_RADIUS * math::cos(t);
            x[1] = SEEN_RING_CENTER.1 + SEEN_RING_RADIUS * math::sin(t);
        }
        SyntheticFamily::GaussianClusters => {
            // midway between two adjacent cluster directions
            let j = rng.random_range(0..spec.k) as f64;
            let angle = 2.0 * core::f64::consts::PI * (j + 0.5) / spec.k as f64;
            x[0] = ID_CLUSTER_RADIUS * math::cos(angle);
            x[1] = ID_CLUSTER_RADIUS * math::sin(angle);
        }
    }
    for v in x.iter_mut() {
        *v += spec.noise * normal(rng);
    }
    x
}

/// Swap a label to a uniformly random other class with probability
/// `spec.label_flip`; the point's position keeps its true class geometry.
fn flip_label<R: Rng>(spec: &SyntheticSpec, c: usize, rng: &mut R) -> usize {
    if spec.label_flip > 0.0 && rng.random::<f64>() < spec.label_flip {
        let mut other = rng.random_range(0..spec.k - 1);
        if other >= c {
            other += 1;
        }
        other
    } else {
        c
    }
}

/// ID data extent per family, used to size the unseen-OOD box.
fn id_extent(spec: &SyntheticSpec) -> f64 {
    match spec.family {
        SyntheticFamily::TwoMoonsRing => 1.5 + MOON_SEPARATION,
        SyntheticFamily::GaussianClusters => ID_CLUSTER_RADIUS + 1.0,
    }
}

fn unseen_ood_point<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Vec<f64> {
    match spec.unseen_family {
        UnseenFamily::UniformBox => {
            let half = 2.0 * id_extent(spec);
            (0..spec.d)
                .map(|_| rng.random_range(-half..half))
                .collect()
        }
        UnseenFamily::FarRing => {
            let radius = 2.0 * id_extent(spec);
            let t = rng.random::<f64>() * 2.0 * core::f64::consts::PI;
            let mut x = alloc::vec![0.0; spec.d];
            x[0] = radius * math::cos(t);
            x[1] = radius * math::sin(t);
            for v in x.iter_mut() {
                *v += spec.noise * normal(rng);
            }
            x
        }
    }
}

/// Deterministically generate a full bundle from the spec. Each split draws
/// from its own seeded stream, so split sizes can change independently
/// without reshuffling the others.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    spec.validate()?;

    let stream = |tag: u64| ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9).wrapping_add(tag));

    let mut labeled = Vec::with_capacity(spec.k * spec.n_per_class);
    let mut rng = stream(1);
    for c in 0..spec.k {
        for _ in 0..spec.n_per_class {
            let point = id_point(spec, c, &mut rng);
            let label = flip_label(spec, c, &mut rng);
            labeled.push(Sample::new(point, Some(label), OodTruth::Id)?);
        }
    }

    let mut unlabeled = Vec::with_capacity(spec.m_in + spec.m_out);
    let mut rng = stream(2);
    for i in 0..spec.m_in {
        unlabeled.push(Sample::new(
            id_point(spec, i % spec.k, &mut rng),
            None,
            OodTruth::Id,
        )?);
    }
    let mut rng = stream(3);
    for _ in 0..spec.m_out {
        unlabeled.push(Sample::new(
            seen_ood_point(spec, &mut rng),
            None,
            OodTruth::SeenOod,
        )?);
    }

    let n_validation = spec.n_test_id / 10;
    let mut validation = Vec::with_capacity(n_validation);
    let mut rng = stream(4);
    for i in 0..n_validation {
        let point = id_point(spec, i % spec.k, &mut rng);
        let label = flip_label(spec, i % spec.k, &mut rng);
        validation.push(Sample::new(point, Some(label), OodTruth::Id)?);
    }

    let mut test_id = Vec::with_capacity(spec.n_test_id);
    let mut rng = stream(5);
    for i in 0..spec.n_test_id {
        let point = id_point(spec, i % spec.k, &mut rng);
        let label = flip_label(spec, i % spec.k, &mut rng);
        test_id.push(Sample::new(point, Some(label), OodTruth::Id)?);
    }

    let mut test_seen_ood = Vec::with_capacity(spec.n_test_seen);
    let mut rng = stream(6);
    for _ in 0..spec.n_test_seen {
        test_seen_ood.push(Sample::new(
            seen_ood_point(spec, &mut rng),
            None,
            OodTruth::SeenOod,
        )?);
    }

    let mut test_unseen_ood = Vec::with_capacity(spec.n_test_unseen);
    let mut rng = stream(7);
    for _ in 0..spec.n_test_unseen {
        test_unseen_ood.push(Sample::new(
            unseen_ood_point(spec, &mut rng),
            None,
            OodTruth::UnseenOod,
        )?);
    }

    Ok(DatasetBundle {
        labeled,
        unlabeled,
        validation,
        test_id,
        test_seen_ood,
        test_unseen_ood,
    })
}

/// Default number of iterations per epoch.
pub const DEFAULT_ITERATIONS_PER_EPOCH: usize = 512;

/// Index batches for one epoch: a fresh shuffle keyed by (seed, epoch),
/// walked cyclically so every iteration yields full batches.
pub fn make_batches(
    n_labeled: usize,
    n_unlabeled: usize,
    batch_l: usize,
    batch_u: usize,
    iterations: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if batch_l == 0 || batch_u == 0 {
        return Err(Error::InvalidArgument("batch sizes must be >= 1".into()));
    }
    if n_labeled == 0 || n_unlabeled == 0 {
        return Err(Error::InvalidArgument(
            "labeled and unlabeled sets must be nonempty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x51_7C_C1_B7_27_22_0A_95).wrapping_add(epoch as u64),
    );
    let shuffled = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        idx
    };
    let order_l = shuffled(n_labeled, &mut rng);
    let order_u = shuffled(n_unlabeled, &mut rng);

    let mut batches = Vec::with_capacity(iterations);
    let (mut pos_l, mut pos_u) = (0usize, 0usize);
    for _ in 0..iterations {
        let mut bl = Vec::with_capacity(batch_l);
        for _ in 0..batch_l {
            bl.push(order_l[pos_l % n_labeled]);
            pos_l += 1;
        }
        let mut bu = Vec::with_capacity(batch_u);
        for _ in 0..batch_u {
            bu.push(order_u[pos_u % n_unlabeled]);
            pos_u += 1;
        }
        batches.push((bl, bu));
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_counts_are_exact() {
        let spec = SyntheticSpec {
            n_per_class: 100,
            label_flip: 0.0,
            ..SyntheticSpec::default()
        };
        let bundle = generate_synthetic(&spec).unwrap();
        assert_eq!(bundle.labeled.len(), 200);
        for c in 0..2 {
            let count = bundle
                .labeled
                .iter()
                .filter(|s| s.label == Some(c))
                .count();
            assert_eq!(count, 100);
        }
    }

    #[test]
    fn label_flips_touch_roughly_the_requested_fraction() {
        let spec = SyntheticSpec {
            n_per_class: 2000,
            label_flip: 0.1,
            ..SyntheticSpec::default()
        };
        let spec = SyntheticSpec {
            n_test_id: 5000,
            ..spec
        };
        let bundle = generate_synthetic(&spec).unwrap();
        // test_id points are generated round-robin, so the true class of
        // point i is i % k; flipped labels disagree with it.
        let flipped = bundle
            .test_id
            .iter()
            .enumerate()
            .filter(|(i, s)| s.label != Some(i % spec.k))
            .count();
        let rate = flipped as f64 / spec.n_test_id as f64;
        assert!((0.07..=0.13).contains(&rate), "flip rate {rate}");
        assert!(spec.validate().is_ok());
        assert!(SyntheticSpec { label_flip: 0.6, ..spec }.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_seen_ood_when_m_out_zero() {
        let spec = SyntheticSpec {
            m_out: 0,
            ..SyntheticSpec::default()
        };
        let bundle = generate_synthetic(&spec).unwrap();
        assert!(bundle
            .unlabeled
            .iter()
            .all(|s| s.ood_truth == OodTruth::Id));
    }

    #[test]
    fn split_label_invariants() {
        let bundle = generate_synthetic(&SyntheticSpec::default()).unwrap();
        assert!(bundle.validation.iter().all(|s| s.label.is_some()));
        assert!(bundle.test_id.iter().all(|s| s.label.is_some()));
        assert!(bundle.test_seen_ood.iter().all(|s| s.label.is_none()));
        assert!(bundle.test_unseen_ood.iter().all(|s| s.label.is_none()));
        assert!(bundle.labeled.iter().all(|s| s.ood_truth == OodTruth::Id));
        assert!(bundle
            .unlabeled
            .iter()
            .all(|s| s.ood_truth != OodTruth::UnseenOod));
    }

    #[test]
    fn gaussian_clusters_family_generates() {
        let spec = SyntheticSpec {
            family: SyntheticFamily::GaussianClusters,
            k: 4,
            d: 3,
            ..SyntheticSpec::default()
        };
        let bundle = generate_synthetic(&spec).unwrap();
        assert_eq!(bundle.labeled.len(), 100);
        assert!(bundle.labeled.iter().all(|s| s.features.len() == 3));
    }

    #[test]
    fn invalid_specs_rejected() {
        let spec = SyntheticSpec {
            k: 1,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&spec).is_err());
        let spec = SyntheticSpec {
            family: SyntheticFamily::TwoMoonsRing,
            k: 3,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn batches_cover_labeled_set_before_repeating() {
        let batches = make_batches(4, 100, 2, 5, 4, 7, 0).unwrap();
        let seen: alloc::collections::BTreeSet<usize> =
            batches[0].0.iter().chain(batches[1].0.iter()).copied().collect();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn batches_deterministic_per_seed_epoch() {
        let a = make_batches(10, 50, 3, 7, 20, 9, 4).unwrap();
        let b = make_batches(10, 50, 3, 7, 20, 9, 4).unwrap();
        assert_eq!(a, b);
        let c = make_batches(10, 50, 3, 7, 20, 9, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn batches_default_iteration_count() {
        let batches = make_batches(10, 50, 2, 4, DEFAULT_ITERATIONS_PER_EPOCH, 1, 0).unwrap();
        assert_eq!(batches.len(), 512);
    }

    #[test]
    fn batches_reject_empty_sets() {
        assert!(make_batches(0, 10, 1, 1, 5, 0, 0).is_err());
        assert!(make_batches(10, 0, 1, 1, 5, 0, 0).is_err());
        assert!(make_batches(10, 10, 0, 1, 5, 0, 0).is_err());
    }
}
