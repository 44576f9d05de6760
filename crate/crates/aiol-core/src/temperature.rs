//! Temperature calibration on the ID validation set and numerical
//! verification of the confidence-gap behaviour under temperature scaling.

use alloc::format;
use alloc::vec::Vec;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::math;
use crate::nn::{self, Logits, ParameterSet};

/// Result of the per-epoch temperature search.
#[derive(Clone, Debug, Serialize)]
pub struct CalibrationResult {
    pub temperature: f64,
    pub nll_at_optimum: f64,
    pub search_iterations: usize,
}

/// Search configuration for `calibrate_temperature`.
#[derive(Clone, Copy, Debug)]
pub struct CalibrationConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub tol: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            t_min: 0.25,
            t_max: 10.0,
            tol: 1e-3,
        }
    }
}

/// Validation NLL at temperature `t`, over precomputed logits.
pub fn validation_nll(logits: &[Logits], labels: &[usize], t: f64) -> f64 {
    let mut nll = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        let p = nn::softmax_t_slice(z.values(), t);
        nll -= math::ln_floored(p[y]);
    }
    nll
}

/// Minimize the validation NLL over T in `[t_min, t_max]` by golden-section
/// search. Logits over the validation set are computed once and reused.
/// If an endpoint beats the interior optimum the endpoint wins.
pub fn calibrate_temperature(
    params: &ParameterSet,
    validation: &[(Vec<f64>, usize)],
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    if validation.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    if !(cfg.t_min > 0.0) || !(cfg.t_min < cfg.t_max) {
        return Err(Error::InvalidArgument(format!(
            "bad search interval [{}, {}]",
            cfg.t_min, cfg.t_max
        )));
    }
    let mut logits = Vec::with_capacity(validation.len());
    let mut labels = Vec::with_capacity(validation.len());
    for (x, y) in validation {
        let z = nn::forward(params, x)?;
        if *y >= z.len() {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for K={}",
                z.len()
            )));
        }
        logits.push(z);
        labels.push(*y);
    }

    let obj = |t: f64| validation_nll(&logits, &labels, t);

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (cfg.t_min, cfg.t_max);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = obj(c);
    let mut fd = obj(d);
    let mut iterations = 2usize;
    while b - a > cfg.tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = obj(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = obj(d);
        }
        iterations += 1;
    }
    let interior = 0.5 * (a + b);
    let f_interior = obj(interior);

    // golden-section assumes unimodality; fall back to the best of the
    // interior optimum and the two endpoints
    let f_lo = obj(cfg.t_min);
    let f_hi = obj(cfg.t_max);
    let (mut best_t, mut best_f) = (interior, f_interior);
    if f_lo < best_f {
        best_t = cfg.t_min;
        best_f = f_lo;
    }
    if f_hi < best_f {
        best_t = cfg.t_max;
        best_f = f_hi;
    }

    Ok(CalibrationResult {
        temperature: best_t,
        nll_at_optimum: best_f,
        search_iterations: iterations,
    })
}

/// Numerical estimate of the constant bounding the range where the
/// confidence gap keeps growing with temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CEstimate {
    /// The gap is non-increasing immediately above T = 1.
    AtMostOne,
    /// Grid argmax of the gap on [1, T_max].
    GreaterThanOne(f64),
}

impl Serialize for CEstimate {
    fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        match self {
            CEstimate::AtMostOne => s.serialize_str("<=1"),
            CEstimate::GreaterThanOne(v) => s.serialize_f64(*v),
        }
    }
}

/// Gap curve, monotonicity verdicts, and the estimated constant.
#[derive(Clone, Debug, Serialize)]
pub struct TheoremReport {
    pub s_in: f64,
    pub s_out: f64,
    pub gap_curve: Vec<(f64, f64)>,
    pub c_estimate: CEstimate,
    pub eq4_verdict: bool,
    pub eq5_verdict: bool,
}

fn check_pair(s_in: f64, s_out: f64) -> Result<()> {
    if !(0.5 < s_out && s_out < s_in && s_in < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "scores must satisfy 0.5 < s_out < s_in < 1, got ({s_in}, {s_out})"
        )));
    }
    Ok(())
}

/// K=2 closed form: S(T) = 1/(1 + r^(1/T)) with r = (1 - S(1))/S(1).
fn score_at(s1: f64, t: f64) -> f64 {
    let r = (1.0 - s1) / s1;
    1.0 / (1.0 + math::powf(r, 1.0 / t))
}

/// ln of the confidence gap, computed in log space so very small gaps at low
/// temperatures stay resolvable instead of underflowing to zero.
fn log_gap(s_in: f64, s_out: f64, t: f64) -> f64 {
    // gap = (b - a) / ((1+a)(1+b)), a = r_in^(1/T) < b = r_out^(1/T)
    let lr_in = math::ln((1.0 - s_in) / s_in);
    let lr_out = math::ln((1.0 - s_out) / s_out);
    let la = lr_in / t;
    let lb = lr_out / t;
    // ln(b - a) = la + ln(exp(lb - la) - 1)
    let diff = lb - la; // > 0
    let ln_b_minus_a = if diff > 500.0 {
        lb
    } else {
        la + math::ln(math::exp_m1(diff))
    };
    let a = math::exp(la);
    let b = math::exp(lb);
    ln_b_minus_a - math::ln_1p(a) - math::ln_1p(b)
}

/// Confidence gap S_in(T) - S_out(T) under the K=2 closed form.
pub fn confidence_gap(s_in: f64, s_out: f64, t: f64) -> Result<f64> {
    check_pair(s_in, s_out)?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {t}"
        )));
    }
    Ok(score_at(s_in, t) - score_at(s_out, t))
}

const GAP_MARGIN: f64 = 1e-12;

/// Whether the gap strictly grows from grid point `lo` to `hi`. Comparisons
/// happen in log space; when both gaps are comfortably representable the
/// linear-space margin of 1e-12 is enforced as well.
fn strictly_grows(s_in: f64, s_out: f64, lo: f64, hi: f64) -> bool {
    let lg_lo = log_gap(s_in, s_out, lo);
    let lg_hi = log_gap(s_in, s_out, hi);
    if lg_lo > -180.0 && lg_hi > -180.0 {
        let g_lo = math::exp(lg_lo);
        let g_hi = math::exp(lg_hi);
        if g_lo > 1e-9 || g_hi > 1e-9 {
            return g_hi - g_lo > GAP_MARGIN;
        }
    }
    lg_hi > lg_lo
}

/// Check the gap's monotonicity on the given temperature grid.
///
/// The grid must include T = 1. Verdicts:
/// * c_estimate: grid argmax of the gap on [1, T_max], reported "<= 1" when
///   the gap is non-increasing immediately above 1;
/// * eq5: gap strictly increasing across grid points in (0, min(1, c)];
/// * eq4: gap strictly increasing across grid points in [1, c_estimate).
pub fn verify_theorem1(s_in: f64, s_out: f64, grid: &[f64]) -> Result<TheoremReport> {
    check_pair(s_in, s_out)?;
    if grid.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument("grid temperatures must be positive".into()));
    }
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    if !sorted.iter().any(|&t| t == 1.0) {
        return Err(Error::InvalidArgument("grid must include T = 1".into()));
    }

    let gap_curve: Vec<(f64, f64)> = sorted
        .iter()
        .map(|&t| (t, score_at(s_in, t) - score_at(s_out, t)))
        .collect();

    let one_idx = sorted.iter().position(|&t| t == 1.0).unwrap();

    // Eq 5: strict growth across all grid points in (0, 1]
    // The closed-form gap is unimodal in T with a single peak at the
    // constant c, which may sit below 1 (e.g. for (0.9, 0.7) it is near
    // 0.93). The monotonicity claims therefore run up to c on either side.
    let mut peak_idx = 0usize;
    for i in 1..sorted.len() {
        if log_gap(s_in, s_out, sorted[i]) > log_gap(s_in, s_out, sorted[peak_idx]) {
            peak_idx = i;
        }
    }

    // c estimate: argmax of the gap on [1, T_max], reported "<= 1" when the
    // gap is non-increasing immediately above 1
    let c_estimate = if peak_idx <= one_idx {
        CEstimate::AtMostOne
    } else {
        CEstimate::GreaterThanOne(sorted[peak_idx])
    };

    // Eq 5: strict growth across grid points in (0, min(1, c)]. The final
    // segment into the grid argmax is non-decreasing by construction, so it
    // is exempt from the strict margin.
    let eq5_end = one_idx.min(peak_idx);
    let eq5_verdict = (0..eq5_end)
        .all(|i| i + 1 == peak_idx || strictly_grows(s_in, s_out, sorted[i], sorted[i + 1]));

    // Eq 4: strict growth across grid points in [1, c); vacuous when the gap
    // already shrinks right above 1
    let eq4_verdict = match c_estimate {
        CEstimate::AtMostOne => true,
        CEstimate::GreaterThanOne(_) => (one_idx..peak_idx)
            .all(|i| i + 1 == peak_idx || strictly_grows(s_in, s_out, sorted[i], sorted[i + 1])),
    };

    Ok(TheoremReport {
        s_in,
        s_out,
        gap_curve,
        c_estimate,
        eq4_verdict,
        eq5_verdict,
    })
}

/// Default verification grid: (0, t_max] at the given step, always
/// containing T = 1.
pub fn default_grid(t_max: f64, step: f64) -> Vec<f64> {
    let n = (t_max / step) as usize;
    let mut grid: Vec<f64> = (1..=n).map(|i| i as f64 * step).collect();
    if !grid.iter().any(|&t| t == 1.0) {
        grid.push(1.0);
        grid.sort_by(|a, b| a.total_cmp(b));
    }
    grid
}

/// Compare the exact confidence with the two-term approximation
/// 1/(1 + (p2/p1)^(1/T)) built from the top two softmax entries at T = 1.
pub fn verify_topk_approximation(logits: &Logits, t: f64) -> Result<(f64, f64, f64)> {
    let exact = nn::confidence_score(logits, t)?;
    let p = nn::softmax_with_temperature(logits, 1.0)?;
    let mut sorted: Vec<f64> = p.values().to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let ratio = sorted[1] / sorted[0];
    let approx = 1.0 / (1.0 + math::powf(ratio, 1.0 / t));
    Ok((exact, approx, math::abs(exact - approx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gap_at_unit_temperature_is_plain_difference() {
        let g = confidence_gap(0.9, 0.7, 1.0).unwrap();
        assert!((g - 0.2).abs() < 1e-12);
    }

    #[test]
    fn gap_vanishes_at_huge_temperature() {
        let g = confidence_gap(0.9, 0.7, 1e6).unwrap();
        assert!(g.abs() < 1e-5);
        assert!(g > 0.0);
    }

    #[test]
    fn gap_derived_value() {
        let g = confidence_gap(0.999, 0.8, 1.5).unwrap();
        assert!((g - 0.27420).abs() < 1e-4, "gap was {g}");
    }

    #[test]
    fn gap_rejects_bad_ordering() {
        assert!(confidence_gap(0.7, 0.9, 1.0).is_err());
        assert!(confidence_gap(0.9, 0.9, 1.0).is_err());
        assert!(confidence_gap(0.9, 0.4, 1.0).is_err());
    }

    #[test]
    fn theorem_pair_with_c_above_one() {
        let grid = default_grid(10.0, 0.01);
        let report = verify_theorem1(0.999, 0.8, &grid).unwrap();
        assert!(report.eq5_verdict);
        assert!(report.eq4_verdict);
        match report.c_estimate {
            CEstimate::GreaterThanOne(c) => assert!(c > 1.5, "c = {c}"),
            CEstimate::AtMostOne => panic!("expected c > 1"),
        }
    }

    #[test]
    fn theorem_pair_with_c_at_most_one() {
        let grid = default_grid(10.0, 0.01);
        let report = verify_theorem1(0.9, 0.7, &grid).unwrap();
        assert!(report.eq5_verdict);
        assert!(report.eq4_verdict); // vacuous
        assert_eq!(report.c_estimate, CEstimate::AtMostOne);
        // Eq 5 sanity: gap(0.5) < gap(1)
        let g_half = confidence_gap(0.9, 0.7, 0.5).unwrap();
        assert!((g_half - 0.14303).abs() < 1e-4);
        assert!(g_half < 0.2);
    }

    #[test]
    fn theorem_needs_unit_temperature_on_grid() {
        let grid = [0.5, 2.0, 3.0];
        assert!(verify_theorem1(0.9, 0.7, &grid).is_err());
    }

    #[test]
    fn log_gap_matches_direct_gap_when_representable() {
        for &t in &[0.3, 0.7, 1.0, 2.0, 5.0] {
            let direct = confidence_gap(0.95, 0.6, t).unwrap();
            let via_log = math::exp(log_gap(0.95, 0.6, t));
            assert!((direct - via_log).abs() < 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn log_gap_resolves_extreme_pairs_at_low_temperature() {
        // raw gaps underflow here; log-space values must stay ordered
        let (s_in, s_out) = (0.9999, 0.999);
        let a = log_gap(s_in, s_out, 0.01);
        let b = log_gap(s_in, s_out, 0.02);
        assert!(a.is_finite() && b.is_finite());
        assert!(b > a);
    }

    #[test]
    fn topk_exact_for_k2() {
        let z = Logits::new(alloc::vec![1.7, -0.4]).unwrap();
        let (exact, approx, err) = verify_topk_approximation(&z, 1.8).unwrap();
        assert!((exact - approx).abs() < 1e-15);
        assert!(err < 1e-15);
    }

    #[test]
    fn topk_tight_when_tail_is_negligible() {
        let z = Logits::new(alloc::vec![10.0, 8.0, -20.0, -20.0]).unwrap();
        let (_, _, err) = verify_topk_approximation(&z, 2.0).unwrap();
        assert!(err < 1e-6, "error was {err}");
    }

    #[test]
    fn topk_breaks_on_uniform_logits() {
        let z = Logits::new(alloc::vec![0.0; 4]).unwrap();
        let (exact, approx, err) = verify_topk_approximation(&z, 1.0).unwrap();
        assert!((exact - 0.25).abs() < 1e-12);
        assert!((approx - 0.5).abs() < 1e-12);
        assert!((err - 0.25).abs() < 1e-12);
    }

    fn single_layer_with_logits() -> ParameterSet {
        // identity net so validation features are the logits directly
        let mut p = ParameterSet::zeros(&[2, 2], Activation::default()).unwrap();
        p.layers[0].weights[0] = 1.0;
        p.layers[0].weights[3] = 1.0;
        p
    }

    #[test]
    fn calibration_clamps_to_t_min_on_monotone_objective() {
        // one correct, confident sample: NLL strictly increases with T
        let params = single_layer_with_logits();
        let v = alloc::vec![(alloc::vec![3.0, 0.0], 0usize)];
        let cfg = CalibrationConfig::default();
        let r = calibrate_temperature(&params, &v, &cfg).unwrap();
        assert!((r.temperature - cfg.t_min).abs() < 2e-3, "T = {}", r.temperature);
    }

    #[test]
    fn calibration_rejects_empty_validation() {
        let params = single_layer_with_logits();
        assert!(calibrate_temperature(&params, &[], &CalibrationConfig::default()).is_err());
    }

    #[test]
    fn calibration_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let params = single_layer_with_logits();
        // mix of confident wrong and unconfident right answers so the
        // optimum sits strictly inside the interval
        let mut v = alloc::vec::Vec::new();
        for i in 0..20 {
            let z0: f64 = rng.random_range(-3.0..3.0);
            let z1: f64 = rng.random_range(-3.0..3.0);
            v.push((alloc::vec![z0, z1], i % 2));
        }
        let cfg = CalibrationConfig::default();
        let r = calibrate_temperature(&params, &v, &cfg).unwrap();

        // exhaustive grid oracle at resolution 1e-3
        let logits: alloc::vec::Vec<Logits> = v
            .iter()
            .map(|(x, _)| Logits::new(x.clone()).unwrap())
            .collect();
        let labels: alloc::vec::Vec<usize> = v.iter().map(|(_, y)| *y).collect();
        let mut best_t = cfg.t_min;
        let mut best = f64::INFINITY;
        let mut t = cfg.t_min;
        while t <= cfg.t_max {
            let f = validation_nll(&logits, &labels, t);
            if f < best {
                best = f;
                best_t = t;
            }
            t += 1e-3;
        }
        assert!((r.temperature - best_t).abs() < 2e-3, "{} vs {}", r.temperature, best_t);
    }

    #[test]
    fn calibration_scaling_identity() {
        // argmin for logits k*z is k times the argmin for z when interior
        let params = single_layer_with_logits();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut v = alloc::vec::Vec::new();
        for i in 0..20 {
            let z0: f64 = rng.random_range(-3.0..3.0);
            let z1: f64 = rng.random_range(-3.0..3.0);
            v.push((alloc::vec![z0, z1], i % 2));
        }
        let cfg = CalibrationConfig {
            t_min: 0.05,
            t_max: 40.0,
            tol: 1e-4,
        };
        let r1 = calibrate_temperature(&params, &v, &cfg).unwrap();
        let scaled: alloc::vec::Vec<(alloc::vec::Vec<f64>, usize)> = v
            .iter()
            .map(|(x, y)| (x.iter().map(|f| 2.0 * f).collect(), *y))
            .collect();
        let r2 = calibrate_temperature(&params, &scaled, &cfg).unwrap();
        assert!(
            (r2.temperature - 2.0 * r1.temperature).abs() < 1e-2,
            "{} vs {}",
            r2.temperature,
            r1.temperature
        );
    }

    #[test]
    fn calibration_objective_beats_endpoints() {
        let params = single_layer_with_logits();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..5 {
            let mut v = alloc::vec::Vec::new();
            for i in 0..15 {
                let z0: f64 = rng.random_range(-4.0..4.0);
                let z1: f64 = rng.random_range(-4.0..4.0);
                v.push((alloc::vec![z0, z1], (i + trial) % 2));
            }
            let cfg = CalibrationConfig::default();
            let r = calibrate_temperature(&params, &v, &cfg).unwrap();
            assert!(r.temperature >= cfg.t_min && r.temperature <= cfg.t_max);
            let logits: alloc::vec::Vec<Logits> = v
                .iter()
                .map(|(x, _)| Logits::new(x.clone()).unwrap())
                .collect();
            let labels: alloc::vec::Vec<usize> = v.iter().map(|(_, y)| *y).collect();
            let f_opt = validation_nll(&logits, &labels, r.temperature);
            let f_lo = validation_nll(&logits, &labels, cfg.t_min);
            let f_hi = validation_nll(&logits, &labels, cfg.t_max);
            assert!(f_opt <= f_lo + 1e-9 && f_opt <= f_hi + 1e-9);
        }
    }
}

