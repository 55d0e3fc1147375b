//! Warden detection statistics: optimal radiometer threshold, minimum
//! detection-error probability (DEP), the detectability transform and its
//! inverse, and an independent Monte Carlo oracle.
//!
//! Under the Gaussian signal model the warden's per-sample received power
//! is exponentially distributed with mean λ0 (UAVs silent) or λ1 (UAVs
//! offloading). The warden thresholds the received power; the minimum of
//! (false alarm + missed detection) over thresholds has a closed form in
//! the excess ratio μ = (λ1−λ0)/λ0, which the Monte Carlo oracle verifies
//! from the raw hypothesis-testing definition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::metrics::{quad_form, SlotAllocation};

/// μ below this is treated as "no detectability" (identical distributions).
pub const MU_DEGENERATE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CovertError {
    #[error("detection statistics are degenerate (mu = {0:.3e} <= {MU_DEGENERATE:e}); DEP is 1")]
    Degenerate(f64),
    #[error("detectability target must lie in (0,1), got {0}")]
    TargetOutOfRange(f64),
    #[error("need at least {min} Monte Carlo samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
}

/// Expected received powers at one warden under the two hypotheses.
#[derive(Debug, Clone, Copy)]
pub struct DetectionStats {
    /// λ0 (W): expected power while UAVs are silent (computing phase).
    pub lambda_h0: f64,
    /// λ1 (W): expected power while UAVs offload.
    pub lambda_h1: f64,
}

impl DetectionStats {
    /// Excess power ratio μ = (λ1 − λ0)/λ0.
    pub fn mu(&self) -> f64 {
        (self.lambda_h1 - self.lambda_h0) / self.lambda_h0
    }
}

/// Expected warden receive powers for one slot:
/// λ0 = g_l^H R_c g_l + σ², λ1 = Σ_k |h_{l,k}^H w_k|² + g_l^H R_o g_l + σ²,
/// with R_c / R_o the computing- and offloading-phase sensing covariances.
pub fn lambda_pair(
    l: usize,
    slot: usize,
    alloc: &SlotAllocation,
    channels: &ChannelSet,
    noise_warden: f64,
) -> DetectionStats {
    let g = &channels.jamming[l];
    let lambda_h0 = quad_form(g, &alloc.cov_compute) + noise_warden;
    let mut uplink = 0.0;
    for (k, w) in alloc.beams.iter().enumerate() {
        uplink += channels.warden[slot][l][k].dotc(w).norm_sqr();
    }
    let lambda_h1 = uplink + quad_form(g, &alloc.cov_offload) + noise_warden;
    DetectionStats { lambda_h0, lambda_h1 }
}

/// Threshold minimizing false alarm + missed detection:
/// δ* = λ0·((1+μ)/μ)·ln(1+μ).
pub fn optimal_threshold(stats: &DetectionStats) -> Result<f64, CovertError> {
    let mu = stats.mu();
    if mu <= MU_DEGENERATE {
        return Err(CovertError::Degenerate(mu));
    }
    Ok(stats.lambda_h0 * (1.0 + mu) / mu * mu.ln_1p())
}

/// Minimum detection-error probability ξ* = 1 − F(μ); exactly 1 for
/// degenerate statistics (μ ≤ tolerance).
pub fn dep_min(stats: &DetectionStats) -> f64 {
    let mu = stats.mu();
    if mu <= MU_DEGENERATE {
        return 1.0;
    }
    1.0 - detection_advantage(mu)
}

/// The warden's best-case detection advantage F(μ) = μ·(1+μ)^{−(1+1/μ)},
/// i.e. 1 − ξ*(μ). Strictly increasing, maps (0,∞) onto (0,1).
/// Evaluated in the log domain so large μ cannot overflow.
pub fn detection_advantage(mu: f64) -> f64 {
    if mu <= 0.0 {
        return 0.0;
    }
    (mu.ln() - (1.0 + 1.0 / mu) * mu.ln_1p()).exp()
}

/// Inverse of [`detection_advantage`] by bisection: the largest tolerable μ
/// for a detectability budget y ∈ (0,1). Converges to an absolute μ
/// tolerance of 1e−10 (or 1e−12 relative for large μ).
pub fn detection_advantage_inverse(y: f64) -> Result<f64, CovertError> {
    if !(0.0 < y && y < 1.0) {
        return Err(CovertError::TargetOutOfRange(y));
    }
    let mut hi = 1.0f64;
    while detection_advantage(hi) < y {
        hi *= 2.0;
        if hi > 1e18 {
            return Err(CovertError::TargetOutOfRange(y));
        }
    }
    let mut lo = 0.0f64;
    while hi - lo > 1e-10 && (hi - lo) > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if detection_advantage(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Result of the Monte Carlo radiometer experiment.
#[derive(Debug, Clone, Copy)]
pub struct McDepEstimate {
    /// Empirical DEP at the analytic optimal threshold.
    pub dep: f64,
    /// Binomial standard error of `dep`.
    pub std_err: f64,
    /// Smallest empirical DEP over the threshold grid (no grid threshold
    /// should beat the analytic optimum beyond statistical error).
    pub grid_min_dep: f64,
    /// Threshold used for `dep`.
    pub threshold: f64,
}

const MC_CHUNK: usize = 1 << 16;
const MC_GRID: usize = 256;
const MC_MIN_SAMPLES: usize = 10_000;

/// Draws `samples` received powers under each hypothesis (exponential with
/// means λ0 and λ1), thresholds them at the analytic δ*, and reports the
/// empirical DEP with standard error, plus the best DEP over a threshold
/// grid. Sample streams are seeded per chunk, so the result is
/// reproducible and independent of worker scheduling.
pub fn mc_dep_oracle(
    stats: &DetectionStats,
    samples: usize,
    seed: u64,
) -> Result<McDepEstimate, CovertError> {
    if samples < MC_MIN_SAMPLES {
        return Err(CovertError::TooFewSamples { min: MC_MIN_SAMPLES, got: samples });
    }
    let threshold = optimal_threshold(stats).unwrap_or(stats.lambda_h0);
    // Histogram bucket width; grid thresholds sit on bucket boundaries.
    let span = 3.0 * threshold.max(stats.lambda_h1.max(stats.lambda_h0));
    let bucket = span / MC_GRID as f64;
    let chunks = samples.div_ceil(MC_CHUNK);

    #[derive(Clone)]
    struct Counts {
        false_alarm: u64,
        missed: u64,
        hist_h0: Vec<u64>,
        hist_h1: Vec<u64>,
    }
    let zero = || Counts {
        false_alarm: 0,
        missed: 0,
        hist_h0: vec![0; MC_GRID + 1],
        hist_h1: vec![0; MC_GRID + 1],
    };
    let merged = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut counts = zero();
            for _ in 0..n {
                let u: f64 = rng.random();
                let x0 = -stats.lambda_h0 * (1.0 - u).ln();
                let v: f64 = rng.random();
                let x1 = -stats.lambda_h1 * (1.0 - v).ln();
                if x0 > threshold {
                    counts.false_alarm += 1;
                }
                if x1 <= threshold {
                    counts.missed += 1;
                }
                counts.hist_h0[((x0 / bucket) as usize).min(MC_GRID)] += 1;
                counts.hist_h1[((x1 / bucket) as usize).min(MC_GRID)] += 1;
            }
            counts
        })
        .reduce(zero, |mut a, b| {
            a.false_alarm += b.false_alarm;
            a.missed += b.missed;
            for i in 0..=MC_GRID {
                a.hist_h0[i] += b.hist_h0[i];
                a.hist_h1[i] += b.hist_h1[i];
            }
            a
        });

    let n = samples as f64;
    let p_fa = merged.false_alarm as f64 / n;
    let p_md = merged.missed as f64 / n;
    let dep = p_fa + p_md;
    let std_err = ((p_fa * (1.0 - p_fa) + p_md * (1.0 - p_md)) / n).sqrt();

    // Empirical DEP at every grid threshold g·bucket via suffix counts.
    let mut grid_min_dep = f64::INFINITY;
    let mut above_h0: u64 = merged.hist_h0.iter().sum();
    let mut above_h1: u64 = merged.hist_h1.iter().sum();
    for g in 0..MC_GRID {
        above_h0 -= merged.hist_h0[g];
        above_h1 -= merged.hist_h1[g];
        let fa = above_h0 as f64 / n;
        let md = 1.0 - above_h1 as f64 / n;
        grid_min_dep = grid_min_dep.min(fa + md);
    }
    Ok(McDepEstimate { dep, std_err, grid_min_dep, threshold })
}

/// Analytic DEP at an arbitrary threshold: ξ(δ) = e^{−δ/λ0} + 1 − e^{−δ/λ1}.
pub fn dep_at_threshold(stats: &DetectionStats, delta: f64) -> f64 {
    (-delta / stats.lambda_h0).exp() + 1.0 - (-delta / stats.lambda_h1).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn stats(mu: f64) -> DetectionStats {
        DetectionStats { lambda_h0: 1.0, lambda_h1: 1.0 + mu }
    }

    #[test]
    fn threshold_closed_form() {
        let d = optimal_threshold(&stats(1.0)).unwrap();
        assert_relative_eq!(d, 2.0 * std::f64::consts::LN_2, max_relative = 1e-14);
    }

    #[test]
    fn threshold_small_mu_limit() {
        let d = optimal_threshold(&stats(1e-9)).unwrap();
        assert_relative_eq!(d, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn threshold_degenerate_rejected() {
        assert!(matches!(optimal_threshold(&stats(0.0)), Err(CovertError::Degenerate(_))));
    }

    #[test]
    fn threshold_beats_grid_search() {
        for mu in [0.05, 0.3, 1.0, 4.0] {
            let s = stats(mu);
            let d_star = optimal_threshold(&s).unwrap();
            let best_dep = dep_at_threshold(&s, d_star);
            let mut grid_best = f64::INFINITY;
            let mut grid_arg = 0.0;
            for i in 1..20_000 {
                let d = 10.0 * s.lambda_h1 * i as f64 / 20_000.0;
                let v = dep_at_threshold(&s, d);
                if v < grid_best {
                    grid_best = v;
                    grid_arg = d;
                }
            }
            assert!(best_dep <= grid_best + 1e-9, "mu={mu}");
            assert_relative_eq!(grid_arg, d_star, max_relative = 1e-3);
        }
    }

    #[test]
    fn dep_min_examples() {
        assert_relative_eq!(dep_min(&stats(1.0)), 0.75, max_relative = 1e-14);
        assert_eq!(dep_min(&stats(0.0)), 1.0);
        assert_relative_eq!(dep_min(&stats(0.0276)), 0.99, epsilon = 2e-4);
    }

    #[test]
    fn advantage_closed_form_and_identity() {
        assert_relative_eq!(detection_advantage(1.0), 0.25, max_relative = 1e-14);
        for mu in [1e-6, 1e-3, 0.0276, 0.5, 1.0, 10.0, 1e4] {
            let xi = dep_min(&stats(mu));
            assert_relative_eq!(1.0 - detection_advantage(mu), xi, max_relative = 1e-12);
            assert!(xi > 0.0 && xi <= 1.0);
        }
    }

    #[test]
    fn advantage_inverse_matches_reference_threshold() {
        let mu = detection_advantage_inverse(0.01).unwrap();
        assert!((mu - 0.0276).abs() < 5e-4, "got {mu}");
    }

    #[test]
    fn advantage_inverse_round_trip() {
        for y in [0.001, 0.01, 0.1] {
            let mu = detection_advantage_inverse(y).unwrap();
            assert_relative_eq!(detection_advantage(mu), y, epsilon = 1e-9);
        }
        assert!(detection_advantage_inverse(0.0).is_err());
        assert!(detection_advantage_inverse(1.0).is_err());
    }

    #[test]
    fn advantage_strictly_increasing() {
        let mut prev = 0.0;
        for i in 0..200 {
            let mu = 10f64.powf(-6.0 + 10.0 * i as f64 / 199.0);
            let f = detection_advantage(mu);
            assert!(f > prev, "not increasing at mu={mu}");
            prev = f;
        }
    }

    #[test]
    fn scaling_leaves_mu_and_dep_unchanged() {
        let a = DetectionStats { lambda_h0: 2e-9, lambda_h1: 3e-9 };
        let c = 4.2e7;
        let b = DetectionStats { lambda_h0: c * a.lambda_h0, lambda_h1: c * a.lambda_h1 };
        assert_relative_eq!(a.mu(), b.mu(), max_relative = 1e-12);
        assert_relative_eq!(dep_min(&a), dep_min(&b), max_relative = 1e-12);
        assert_relative_eq!(
            optimal_threshold(&b).unwrap(),
            c * optimal_threshold(&a).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn mc_identical_distributions_dep_one() {
        let est = mc_dep_oracle(&stats(0.0), 200_000, 7).unwrap();
        assert!((est.dep - 1.0).abs() <= 3.0 * est.std_err, "dep={}", est.dep);
    }

    #[test]
    fn mc_matches_closed_form() {
        for mu in [0.0276, 1.0] {
            let s = stats(mu);
            let est = mc_dep_oracle(&s, 1_000_000, 42).unwrap();
            let analytic = dep_min(&s);
            assert!(
                (est.dep - analytic).abs() <= 3.0 * est.std_err,
                "mu={mu}: {} vs {analytic} (se {})",
                est.dep,
                est.std_err
            );
            assert!(est.grid_min_dep >= est.dep - 4.0 * est.std_err);
        }
    }

    #[test]
    fn mc_deterministic_given_seed() {
        let a = mc_dep_oracle(&stats(0.5), 100_000, 9).unwrap();
        let b = mc_dep_oracle(&stats(0.5), 100_000, 9).unwrap();
        assert_eq!(a.dep, b.dep);
        assert_eq!(a.grid_min_dep, b.grid_min_dep);
    }

    #[test]
    fn mc_rejects_tiny_sample_counts() {
        assert!(matches!(
            mc_dep_oracle(&stats(1.0), 100, 1),
            Err(CovertError::TooFewSamples { .. })
        ));
    }

    proptest! {
        #[test]
        fn dep_in_unit_interval(mu in 0.0f64..100.0) {
            let v = dep_min(&stats(mu));
            prop_assert!(v > 0.0 && v <= 1.0);
        }
    }
}
