//! Steering vectors, line-of-sight channel families, per-slot aggregates,
//! and analytic position derivatives.
//!
//! Four channel families, all deterministic LoS with a common reference
//! path loss `C0`:
//! - offloading: UAV array → AP receive array, rank-1 outer product
//! - warden: UAV array → single-antenna warden
//! - jamming: AP transmit array → warden (static: both endpoints fixed)
//! - sensing: AP → target → AP cascade, rank-1 with 1/(d_m·d_j) gain
//!
//! Aggregates stack per-AP blocks vertically (receive side) so downstream
//! code works with one matrix per UAV / warden / target sample.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::scenario::{dist3, ScenarioConfig, Trajectory};

/// Distances below this (m) are treated as a coincident-node singularity.
pub const MIN_SEPARATION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("nodes are {dist:.3e} m apart; channel model needs at least {MIN_SEPARATION:e} m")]
    Singularity { dist: f64 },
}

/// Uniform-linear-array steering vector with its generating geometry.
#[derive(Debug, Clone)]
pub struct SteeringVector {
    /// Angle the array sees (rad).
    pub angle: f64,
    /// Element spacing over wavelength.
    pub spacing: f64,
    /// Unit-modulus phase entries; entry 0 is always 1.
    pub entries: DVector<Complex64>,
}

/// Steering vector of an `n`-element ULA at angle `theta`:
/// entry i = exp(j·2π·spacing·cos(theta)·i).
pub fn steering(theta: f64, n: usize, spacing: f64) -> SteeringVector {
    let entries = steering_from_cos(theta.cos(), n, spacing);
    SteeringVector { angle: theta, spacing, entries }
}

fn steering_from_cos(cos_theta: f64, n: usize, spacing: f64) -> DVector<Complex64> {
    DVector::from_fn(n, |i, _| {
        Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * spacing * cos_theta * i as f64)
    })
}

/// Entrywise derivative of a steering vector when cos(angle) varies with a
/// coordinate: d/dx entry_i = j·2π·spacing·i·dcos_dx · entry_i. Entry 0 is
/// always zero.
fn steering_derivative(
    cos_theta: f64,
    dcos_dx: f64,
    n: usize,
    spacing: f64,
) -> DVector<Complex64> {
    let a = steering_from_cos(cos_theta, n, spacing);
    DVector::from_fn(n, |i, _| {
        Complex64::new(0.0, 2.0 * std::f64::consts::PI * spacing * i as f64 * dcos_dx) * a[i]
    })
}

fn checked_distance(a: [f64; 3], b: [f64; 3]) -> Result<f64, ChannelError> {
    let d = dist3(a, b);
    if d < MIN_SEPARATION {
        return Err(ChannelError::Singularity { dist: d });
    }
    Ok(d)
}

fn clamped_ratio(num: f64, den: f64) -> f64 {
    (num / den).clamp(-1.0, 1.0)
}

/// Offloading channel from one UAV to one AP: √(C0/d²)·a_R(θ)·a_U(θ)ᵀ with
/// θ = arccos(H_k/d). Shape N_R × N_U, rank 1.
pub fn offload_channel(
    uav: [f64; 3],
    ap: [f64; 3],
    c0: f64,
    n_r: usize,
    n_u: usize,
    spacing: f64,
) -> Result<DMatrix<Complex64>, ChannelError> {
    let d = checked_distance(uav, ap)?;
    let cos_theta = clamped_ratio(uav[2] - ap[2], d);
    let ar = steering_from_cos(cos_theta, n_r, spacing);
    let au = steering_from_cos(cos_theta, n_u, spacing);
    Ok((ar * au.transpose()).scale(c0.sqrt() / d))
}

/// Stacked offloading channel of one UAV to all APs: (M·N_R) × N_U.
pub fn offload_aggregate(
    uav: [f64; 3],
    cfg: &ScenarioConfig,
) -> Result<DMatrix<Complex64>, ChannelError> {
    let mut h = DMatrix::zeros(cfg.m() * cfg.n_r, cfg.n_u);
    for m in 0..cfg.m() {
        let block = offload_channel(uav, cfg.ap_position(m), cfg.c0, cfg.n_r, cfg.n_u, cfg.spacing)?;
        h.view_mut((m * cfg.n_r, 0), (cfg.n_r, cfg.n_u)).copy_from(&block);
    }
    Ok(h)
}

/// Warden link from one UAV: √(C0/d²)·a_U(φ) with φ = arccos((H_W−H_k)/d).
pub fn warden_channel(
    uav: [f64; 3],
    warden: [f64; 3],
    c0: f64,
    n_u: usize,
    spacing: f64,
) -> Result<DVector<Complex64>, ChannelError> {
    let d = checked_distance(uav, warden)?;
    let cos_phi = clamped_ratio(warden[2] - uav[2], d);
    Ok(steering_from_cos(cos_phi, n_u, spacing).scale(c0.sqrt() / d))
}

/// Jamming link from one AP to one warden: √(C0/d²)·a_T(α),
/// α = arccos(H_W/d). Static across slots.
pub fn jamming_channel(
    ap: [f64; 3],
    warden: [f64; 3],
    c0: f64,
    n_t: usize,
    spacing: f64,
) -> Result<DVector<Complex64>, ChannelError> {
    let d = checked_distance(ap, warden)?;
    let cos_alpha = clamped_ratio(warden[2] - ap[2], d);
    Ok(steering_from_cos(cos_alpha, n_t, spacing).scale(c0.sqrt() / d))
}

/// Stacked jamming vector from all APs to one warden: length M·N_T.
pub fn jamming_aggregate(
    warden: [f64; 3],
    cfg: &ScenarioConfig,
) -> Result<DVector<Complex64>, ChannelError> {
    let mut g = DVector::zeros(cfg.m() * cfg.n_t);
    for m in 0..cfg.m() {
        let block = jamming_channel(cfg.ap_position(m), warden, cfg.c0, cfg.n_t, cfg.spacing)?;
        g.rows_mut(m * cfg.n_t, cfg.n_t).copy_from(&block);
    }
    Ok(g)
}

/// Cascaded sensing channel AP m → target → AP j:
/// C0·a_R(β_j)·a_T(β_m)ᵀ/(d_m·d_j) with β = arccos(H_T/d). Shape N_R × N_T.
pub fn sensing_channel(
    ap_tx: [f64; 3],
    ap_rx: [f64; 3],
    target: [f64; 3],
    c0: f64,
    n_t: usize,
    n_r: usize,
    spacing: f64,
) -> Result<DMatrix<Complex64>, ChannelError> {
    let d_m = checked_distance(ap_tx, target)?;
    let d_j = checked_distance(ap_rx, target)?;
    let cos_bm = clamped_ratio(target[2] - ap_tx[2], d_m);
    let cos_bj = clamped_ratio(target[2] - ap_rx[2], d_j);
    let ar = steering_from_cos(cos_bj, n_r, spacing);
    let at = steering_from_cos(cos_bm, n_t, spacing);
    Ok((ar * at.transpose()).scale(c0 / (d_m * d_j)))
}

/// Full sensing aggregate for one target position: the M×M block matrix
/// whose (row j, col m) block is the m→target→j cascade; (M·N_R) × (M·N_T).
pub fn sensing_aggregate(
    target: [f64; 3],
    cfg: &ScenarioConfig,
) -> Result<DMatrix<Complex64>, ChannelError> {
    let mut g = DMatrix::zeros(cfg.m() * cfg.n_r, cfg.m() * cfg.n_t);
    for j in 0..cfg.m() {
        for m in 0..cfg.m() {
            let block = sensing_channel(
                cfg.ap_position(m),
                cfg.ap_position(j),
                target,
                cfg.c0,
                cfg.n_t,
                cfg.n_r,
                cfg.spacing,
            )?;
            g.view_mut((j * cfg.n_r, m * cfg.n_t), (cfg.n_r, cfg.n_t)).copy_from(&block);
        }
    }
    Ok(g)
}

/// x- and y-derivatives of a channel block with respect to the UAV's
/// horizontal position.
#[derive(Debug, Clone)]
pub struct PositionDerivative<T> {
    pub d_x: T,
    pub d_y: T,
}

/// Analytic ∂H_{m,k}/∂(x_k, y_k) for one UAV–AP offloading block:
/// path-loss derivative plus both steering derivatives.
pub fn offload_channel_derivative(
    uav: [f64; 3],
    ap: [f64; 3],
    c0: f64,
    n_r: usize,
    n_u: usize,
    spacing: f64,
) -> Result<PositionDerivative<DMatrix<Complex64>>, ChannelError> {
    let d = checked_distance(uav, ap)?;
    let alt = uav[2] - ap[2];
    let cos_theta = clamped_ratio(alt, d);
    let ar = steering_from_cos(cos_theta, n_r, spacing);
    let au = steering_from_cos(cos_theta, n_u, spacing);
    let sqrt_c0 = c0.sqrt();
    let deriv = |delta: f64| {
        // d(d)/dx = delta/d; d(cosθ)/dx = −alt·delta/d³.
        let dd = delta / d;
        let dcos = -alt * delta / (d * d * d);
        let dar = steering_derivative(cos_theta, dcos, n_r, spacing);
        let dau = steering_derivative(cos_theta, dcos, n_u, spacing);
        (&ar * au.transpose()).scale(-sqrt_c0 * dd / (d * d))
            + (&dar * au.transpose() + &ar * dau.transpose()).scale(sqrt_c0 / d)
    };
    Ok(PositionDerivative { d_x: deriv(uav[0] - ap[0]), d_y: deriv(uav[1] - ap[1]) })
}

/// Analytic ∂H_k/∂(x_k, y_k) for the stacked offloading aggregate.
pub fn offload_aggregate_derivative(
    uav: [f64; 3],
    cfg: &ScenarioConfig,
) -> Result<PositionDerivative<DMatrix<Complex64>>, ChannelError> {
    let rows = cfg.m() * cfg.n_r;
    let mut d_x = DMatrix::zeros(rows, cfg.n_u);
    let mut d_y = DMatrix::zeros(rows, cfg.n_u);
    for m in 0..cfg.m() {
        let block = offload_channel_derivative(
            uav,
            cfg.ap_position(m),
            cfg.c0,
            cfg.n_r,
            cfg.n_u,
            cfg.spacing,
        )?;
        d_x.view_mut((m * cfg.n_r, 0), (cfg.n_r, cfg.n_u)).copy_from(&block.d_x);
        d_y.view_mut((m * cfg.n_r, 0), (cfg.n_r, cfg.n_u)).copy_from(&block.d_y);
    }
    Ok(PositionDerivative { d_x, d_y })
}

/// Analytic ∂h_{l,k}/∂(x_k, y_k) for one warden link.
pub fn warden_channel_derivative(
    uav: [f64; 3],
    warden: [f64; 3],
    c0: f64,
    n_u: usize,
    spacing: f64,
) -> Result<PositionDerivative<DVector<Complex64>>, ChannelError> {
    let d = checked_distance(uav, warden)?;
    let alt = warden[2] - uav[2];
    let cos_phi = clamped_ratio(alt, d);
    let au = steering_from_cos(cos_phi, n_u, spacing);
    let sqrt_c0 = c0.sqrt();
    let deriv = |delta: f64| {
        let dd = delta / d;
        let dcos = -alt * delta / (d * d * d);
        let dau = steering_derivative(cos_phi, dcos, n_u, spacing);
        au.scale(-sqrt_c0 * dd / (d * d)) + dau.scale(sqrt_c0 / d)
    };
    Ok(PositionDerivative {
        d_x: deriv(uav[0] - warden[0]),
        d_y: deriv(uav[1] - warden[1]),
    })
}

/// All channels of a scenario evaluated along one trajectory.
///
/// Offloading and warden links vary per slot (the UAV moves); jamming links
/// are static; sensing aggregates depend only on the target sample.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// `offload[n][k]`: stacked offloading channel, (M·N_R) × N_U.
    pub offload: Vec<Vec<DMatrix<Complex64>>>,
    /// `warden[n][l][k]`: UAV-to-warden link, length N_U.
    pub warden: Vec<Vec<Vec<DVector<Complex64>>>>,
    /// `jamming[l]`: stacked AP-to-warden vector, length M·N_T.
    pub jamming: Vec<DVector<Complex64>>,
    /// `sensing[q]`: stacked cascade for target sample q, (M·N_R) × (M·N_T).
    pub sensing: Vec<DMatrix<Complex64>>,
}

impl ChannelSet {
    pub fn build(
        cfg: &ScenarioConfig,
        traj: &Trajectory,
        samples: &[[f64; 3]],
    ) -> Result<ChannelSet, ChannelError> {
        let mut offload = Vec::with_capacity(cfg.n_slots);
        let mut warden = Vec::with_capacity(cfg.n_slots);
        for n in 0..cfg.n_slots {
            let mut per_uav = Vec::with_capacity(cfg.k());
            for k in 0..cfg.k() {
                per_uav.push(offload_aggregate(traj.position3(cfg, k, n), cfg)?);
            }
            offload.push(per_uav);
            let mut per_warden = Vec::with_capacity(cfg.l());
            for l in 0..cfg.l() {
                let mut links = Vec::with_capacity(cfg.k());
                for k in 0..cfg.k() {
                    links.push(warden_channel(
                        traj.position3(cfg, k, n),
                        cfg.warden_positions[l],
                        cfg.c0,
                        cfg.n_u,
                        cfg.spacing,
                    )?);
                }
                per_warden.push(links);
            }
            warden.push(per_warden);
        }
        let jamming = (0..cfg.l())
            .map(|l| jamming_aggregate(cfg.warden_positions[l], cfg))
            .collect::<Result<_, _>>()?;
        let sensing = samples
            .iter()
            .map(|&q| sensing_aggregate(q, cfg))
            .collect::<Result<_, _>>()?;
        Ok(ChannelSet { offload, warden, jamming, sensing })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const SPACING: f64 = 0.5;

    fn cnorm(m: &DMatrix<Complex64>) -> f64 {
        m.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn steering_broadside_is_all_ones() {
        let s = steering(std::f64::consts::FRAC_PI_2, 4, SPACING);
        for e in s.entries.iter() {
            assert_relative_eq!((e - Complex64::new(1.0, 0.0)).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn steering_endfire_alternates_sign() {
        let s = steering(0.0, 2, 0.5);
        assert_relative_eq!((s.entries[0] - Complex64::new(1.0, 0.0)).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((s.entries[1] + Complex64::new(1.0, 0.0)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn steering_single_element() {
        let s = steering(1.234, 1, SPACING);
        assert_eq!(s.entries.len(), 1);
        assert_relative_eq!((s.entries[0] - Complex64::new(1.0, 0.0)).norm(), 0.0);
    }

    #[test]
    fn offload_gain_above_ap() {
        let h = offload_channel([0.0, 0.0, 100.0], [0.0, 0.0, 0.0], 1e-3, 2, 2, SPACING).unwrap();
        for e in h.iter() {
            assert_relative_eq!(e.norm(), 3.1623e-4, max_relative = 1e-4);
        }
        // Frobenius norm = gain·√(rows·cols) for rank-1 unit-modulus factors.
        assert_relative_eq!(cnorm(&h), 1e-3f64.sqrt() / 100.0 * 2.0, max_relative = 1e-12);
    }

    #[test]
    fn offload_scalar_case() {
        let h = offload_channel([3.0, 0.0, 4.0], [0.0, 0.0, 0.0], 1e-3, 1, 1, SPACING).unwrap();
        assert_relative_eq!(h[(0, 0)].re, 1e-3f64.sqrt() / 5.0, max_relative = 1e-12);
        assert_relative_eq!(h[(0, 0)].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn offload_is_rank_one() {
        let h = offload_channel([37.0, -12.0, 90.0], [5.0, 8.0, 0.0], 1e-3, 4, 2, SPACING).unwrap();
        let svd = h.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(sv[1] < 1e-12 * sv[0]);
    }

    #[test]
    fn coincident_nodes_rejected() {
        let r = offload_channel([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 1e-3, 2, 2, SPACING);
        assert!(matches!(r, Err(ChannelError::Singularity { .. })));
    }

    #[test]
    fn warden_gain_directly_above() {
        let h = warden_channel([0.0, 0.0, 100.0], [0.0, 0.0, 105.0], 1e-3, 2, SPACING).unwrap();
        for e in h.iter() {
            assert_relative_eq!(e.norm(), 1e-3f64.sqrt() / 5.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn warden_norm_any_geometry() {
        let h = warden_channel([10.0, -4.0, 100.0], [40.0, 6.0, 105.0], 1e-3, 3, SPACING).unwrap();
        let d = dist3([10.0, -4.0, 100.0], [40.0, 6.0, 105.0]);
        assert_relative_eq!(h.norm(), (1e-3_f64 * 3.0).sqrt() / d, max_relative = 1e-12);
    }

    #[test]
    fn warden_angle_equal_offsets() {
        // Horizontal offset equal to the altitude gap → 45° departure angle.
        let uav = [0.0, 0.0, 100.0];
        let w = [30.0, 0.0, 130.0];
        let d = dist3(uav, w);
        let cos_phi = (w[2] - uav[2]) / d;
        assert_relative_eq!(cos_phi.acos(), std::f64::consts::FRAC_PI_4, max_relative = 1e-12);
        let h = warden_channel(uav, w, 1e-3, 2, SPACING).unwrap();
        let expect = steering(std::f64::consts::FRAC_PI_4, 2, SPACING).entries;
        let scaled = h.scale(d / 1e-3f64.sqrt());
        assert_relative_eq!((scaled[1] - expect[1]).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn jamming_scalar_and_norm() {
        let g = jamming_channel([0.0, 0.0, 0.0], [30.0, 0.0, 40.0], 1e-3, 1, SPACING).unwrap();
        assert_relative_eq!(g[0].norm(), 1e-3f64.sqrt() / 50.0, max_relative = 1e-12);

        let mut cfg = ScenarioConfig::reference_default();
        cfg.n_t = 4;
        let w = cfg.warden_positions[0];
        let agg = jamming_aggregate(w, &cfg).unwrap();
        let expect: f64 = (0..cfg.m())
            .map(|m| cfg.c0 * cfg.n_t as f64 / dist3(cfg.ap_position(m), w).powi(2))
            .sum();
        assert_relative_eq!(agg.norm_squared(), expect, max_relative = 1e-12);
    }

    #[test]
    fn sensing_scalar_case() {
        let g = sensing_channel(
            [30.0, 0.0, 0.0],
            [30.0, 0.0, 0.0],
            [0.0, 0.0, 40.0],
            1e-3,
            1,
            1,
            SPACING,
        )
        .unwrap();
        assert_relative_eq!(g[(0, 0)].norm(), 1e-3 / 2500.0, max_relative = 1e-12);
    }

    #[test]
    fn sensing_blocks_share_gain_and_rank() {
        let (a, b, t) = ([40.0, 0.0, 0.0], [-25.0, 30.0, 0.0], [3.0, -2.0, 15.0]);
        let gm = sensing_channel(a, b, t, 1e-3, 4, 2, SPACING).unwrap();
        let gj = sensing_channel(b, a, t, 1e-3, 4, 2, SPACING).unwrap();
        let gain = 1e-3 / (dist3(a, t) * dist3(b, t));
        for e in gm.iter().chain(gj.iter()) {
            assert_relative_eq!(e.norm(), gain, max_relative = 1e-12);
        }
        let svd = gm.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
        assert!(sv[1] < 1e-12 * sv[0]);
    }

    #[test]
    fn doubling_distances_quarters_cascaded_power() {
        let (a, b, t) = ([40.0, 10.0, 0.0], [-25.0, 30.0, 0.0], [0.0, 0.0, 0.0]);
        let scale = |p: [f64; 3]| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]];
        let g1 = sensing_channel(a, b, t, 1e-3, 3, 2, SPACING).unwrap();
        let g2 = sensing_channel(scale(a), scale(b), t, 1e-3, 3, 2, SPACING).unwrap();
        assert_relative_eq!(cnorm(&g2), cnorm(&g1) / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn aggregates_are_block_stackings() {
        let mut cfg = ScenarioConfig::reference_default();
        cfg.n_t = 4;
        cfg.q_samples = 2;
        let traj = crate::scenario::Trajectory::straight(&cfg);
        let samples =
            crate::scenario::sample_sensing_area(&cfg.sensing_box, cfg.q_samples).unwrap();
        let set = ChannelSet::build(&cfg, &traj, &samples).unwrap();
        let uav = traj.position3(&cfg, 1, 3);
        for m in 0..cfg.m() {
            let block =
                offload_channel(uav, cfg.ap_position(m), cfg.c0, cfg.n_r, cfg.n_u, cfg.spacing)
                    .unwrap();
            let view = set.offload[3][1].view((m * cfg.n_r, 0), (cfg.n_r, cfg.n_u));
            assert_eq!(view.into_owned(), block);
        }
        for (j, m) in [(0usize, 1usize), (2, 0)] {
            let block = sensing_channel(
                cfg.ap_position(m),
                cfg.ap_position(j),
                samples[1],
                cfg.c0,
                cfg.n_t,
                cfg.n_r,
                cfg.spacing,
            )
            .unwrap();
            let view = set.sensing[1].view((j * cfg.n_r, m * cfg.n_t), (cfg.n_r, cfg.n_t));
            assert_eq!(view.into_owned(), block);
        }
    }

    fn fd_offload(
        uav: [f64; 3],
        ap: [f64; 3],
        axis: usize,
        step: f64,
    ) -> DMatrix<Complex64> {
        let mut hi = uav;
        let mut lo = uav;
        hi[axis] += step;
        lo[axis] -= step;
        let a = offload_channel(hi, ap, 1e-3, 2, 2, SPACING).unwrap();
        let b = offload_channel(lo, ap, 1e-3, 2, 2, SPACING).unwrap();
        (a - b).scale(1.0 / (2.0 * step))
    }

    #[test]
    fn offload_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let uav = [rng.random_range(-150.0..150.0), rng.random_range(-150.0..150.0), 100.0];
            let ap = [rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), 0.0];
            let d = offload_channel_derivative(uav, ap, 1e-3, 2, 2, SPACING).unwrap();
            for (axis, analytic) in [(0, &d.d_x), (1, &d.d_y)] {
                let fd = fd_offload(uav, ap, axis, 1e-2);
                let diff = analytic - &fd;
                assert!(cnorm(&diff) <= 1e-4 * cnorm(analytic).max(1e-12), "axis {axis}");
            }
        }
    }

    #[test]
    fn warden_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let uav = [rng.random_range(-150.0..150.0), rng.random_range(-150.0..150.0), 100.0];
            let w = [rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), 105.0];
            let d = warden_channel_derivative(uav, w, 1e-3, 2, SPACING).unwrap();
            for (axis, analytic) in [(0, &d.d_x), (1, &d.d_y)] {
                let mut hi = uav;
                let mut lo = uav;
                hi[axis] += 1e-2;
                lo[axis] -= 1e-2;
                let fd = (warden_channel(hi, w, 1e-3, 2, SPACING).unwrap()
                    - warden_channel(lo, w, 1e-3, 2, SPACING).unwrap())
                .scale(1.0 / 2e-2);
                let diff = analytic - &fd;
                assert!(diff.norm() <= 1e-4 * analytic.norm().max(1e-12));
            }
        }
    }

    #[test]
    fn derivative_vanishes_at_apex() {
        let d = offload_channel_derivative(
            [0.0, 0.0, 100.0],
            [0.0, 0.0, 0.0],
            1e-3,
            2,
            2,
            SPACING,
        )
        .unwrap();
        assert!(cnorm(&d.d_x) < 1e-15);
        assert!(cnorm(&d.d_y) < 1e-15);
    }

    #[test]
    fn steering_derivative_first_entry_zero() {
        let d = steering_derivative(0.3, 0.7, 5, SPACING);
        assert_eq!(d[0], Complex64::new(0.0, 0.0));
        assert!(d[4].norm() > 0.0);
    }

    proptest! {
        #[test]
        fn steering_unit_modulus_and_cos_symmetry(theta in 0.0f64..std::f64::consts::PI, n in 1usize..8) {
            let s = steering(theta, n, SPACING);
            for e in s.entries.iter() {
                prop_assert!((e.norm() - 1.0).abs() < 1e-12);
            }
            prop_assert!((s.entries[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            let mirrored = steering(2.0 * std::f64::consts::PI - theta, n, SPACING);
            for (a, b) in s.entries.iter().zip(mirrored.entries.iter()) {
                prop_assert!((a - b).norm() < 1e-9);
            }
        }
    }
}
