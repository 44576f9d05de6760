//! Property tests across modules: the temperature-gap monotonicity sweep,
//! EM behaviour on random mixtures, calibration bounds, selection
//! disjointness, and information-theoretic inequalities.

use aiol_core::nn::{self, Activation, Logits, ParameterSet, Probs};
use aiol_core::selection::{self, ThresholdPair};
use aiol_core::temperature::{self, CalibrationConfig, CEstimate};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn theorem_sweep_over_random_pairs() {
    // gap strictly increasing on (0, min(1, c)] and on [1, c) for every
    // valid score pair, at grid resolution 0.01
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let grid = temperature::default_grid(10.0, 0.01);
    let mut c_above_one = 0usize;
    for _ in 0..1000 {
        let s_out = 0.5 + rng.random::<f64>() * 0.499;
        let s_in = s_out + (1.0 - 1e-9 - s_out) * rng.random::<f64>().max(1e-6);
        let report = temperature::verify_theorem1(s_in, s_out, &grid).unwrap();
        assert!(report.eq5_verdict, "eq5 failed for ({s_in}, {s_out})");
        assert!(report.eq4_verdict, "eq4 failed for ({s_in}, {s_out})");
        if let CEstimate::GreaterThanOne(c) = report.c_estimate {
            assert!(c > 1.0);
            c_above_one += 1;
        }
    }
    // both regimes must actually occur in the sweep
    assert!(c_above_one > 100 && c_above_one < 900, "{c_above_one}");
}

#[test]
fn em_loglikelihood_monotone_on_random_mixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let n = rng.random_range(20..200);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let (mu, sd) = if rng.random::<bool>() {
                    (0.8, 0.05)
                } else {
                    (0.55, 0.08)
                };
                (mu + sd * z).clamp(0.01, 0.999)
            })
            .collect();
        match selection::fit_gmm_1d(&scores, 100, 1e-8) {
            Ok(fit) => {
                for w in fit.log_likelihoods.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "loglik dropped: {} -> {}", w[0], w[1]);
                }
                assert!(fit.model.mean[0] >= fit.model.mean[1]);
            }
            Err(_) => {} // degenerate draws are allowed to be rejected
        }
    }
}

#[test]
fn calibration_stays_in_bounds_on_random_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = CalibrationConfig::default();
    for _ in 0..25 {
        let params =
            ParameterSet::init(&[3, 8, 3], Activation::default(), &mut rng).unwrap();
        let validation: Vec<(Vec<f64>, usize)> = (0..20)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                (x, rng.random_range(0..3))
            })
            .collect();
        let result = temperature::calibrate_temperature(&params, &validation, &cfg).unwrap();
        assert!(result.temperature >= cfg.t_min && result.temperature <= cfg.t_max);
        let logits: Vec<Logits> = validation
            .iter()
            .map(|(x, _)| nn::forward(&params, x).unwrap())
            .collect();
        let labels: Vec<usize> = validation.iter().map(|(_, y)| *y).collect();
        let f_opt = temperature::validation_nll(&logits, &labels, result.temperature);
        assert!((result.nll_at_optimum - f_opt).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn gibbs_inequality(raw_p in prop::collection::vec(0.01f64..10.0, 2..6),
                        raw_q_seed in 0u64..1000) {
        // CE(p, q) >= H(p), equality iff q = p
        let k = raw_p.len();
        let sum: f64 = raw_p.iter().sum();
        let p = Probs::new(raw_p.iter().map(|v| v / sum).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(raw_q_seed);
        let raw_q: Vec<f64> = (0..k).map(|_| 0.01 + rng.random::<f64>()).collect();
        let qsum: f64 = raw_q.iter().sum();
        let q = Probs::new(raw_q.iter().map(|v| v / qsum).collect()).unwrap();
        prop_assert!(nn::cross_entropy(&p, &q) >= nn::entropy(&p) - 1e-12);
        prop_assert!((nn::cross_entropy(&p, &p) - nn::entropy(&p)).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution(raw in prop::collection::vec(-50.0f64..50.0, 2..8),
                                 t in 0.1f64..20.0) {
        let z = Logits::new(raw).unwrap();
        let p = nn::softmax_with_temperature(&z, t).unwrap();
        let sum: f64 = p.values().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(p.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn selection_is_disjoint_and_strict(scores in prop::collection::vec(0.0f64..1.0, 1..100),
                                        tau_in in 0.55f64..0.95,
                                        gap in 0.01f64..0.4) {
        let pair = ThresholdPair {
            tau_in,
            tau_out: (tau_in - gap).max(0.01),
            clamped_in: false,
            clamped_out: false,
        };
        let sel = selection::select_in_out(&scores, &pair);
        for &i in &sel.in_indices {
            prop_assert!(scores[i] > pair.tau_in);
            prop_assert!(!sel.out_indices.contains(&i));
        }
        for &i in &sel.out_indices {
            prop_assert!(scores[i] < pair.tau_out);
        }
        // boundary scores belong to neither set
        for (i, &s) in scores.iter().enumerate() {
            if s == pair.tau_in || s == pair.tau_out {
                prop_assert!(!sel.in_indices.contains(&i) && !sel.out_indices.contains(&i));
            }
        }
    }
}
