//! Trajectory refinement under a fixed communication/sensing allocation.
//!
//! The interior waypoints are the only decision variables. Propulsion
//! energy is modeled exactly through conic epigraphs (the induced-power
//! identity 1/y² = y² + v²/v0² is kept conic on one side and linearized
//! on the other); separation floors use tangent restrictions of the
//! convex squared distance; every position-dependent communication,
//! sensing, and covertness row is replaced by its first-order Taylor
//! expansion built from analytic channel derivatives. A trust region
//! bounds the Taylor error, and a candidate step is accepted only when
//! the *exact* nonlinear audit confirms feasibility and a strictly lower
//! propulsion energy — so the accepted-energy trace is monotone by
//! construction.
//!
//! Note that propulsion power is an even function of speed around zero,
//! so hovering segments (and feasible straight constant-speed routes in
//! general) are first-order stationary: the model predicts no progress
//! there and the loop stops. Improvements come from smoothing detours
//! that the initializer or feasibility coupling introduced.

use nalgebra::DVector;
use num_complex::Complex64;
use thiserror::Error;

use crate::channel::{self, ChannelError, ChannelSet};
use crate::conic::{ConicError, LinExpr, Problem, VarId};
use crate::metrics::{self, MetricsError, ResourceAllocation};
use crate::scenario::{
    propulsion_power, velocity_from_waypoints, PropulsionParams, ScenarioConfig, ScenarioError,
    Trajectory,
};

/// Initial trust-region radius (m).
pub const TR_OMEGA0: f64 = 5.0;
/// Radius below which the search stops (m).
pub const TR_OMEGA_MIN: f64 = 1e-2;
/// Cap on subproblem solves.
pub const TR_MAX_ITERS: usize = 100;
/// Required relative decrease of the exact energy for acceptance.
pub const TR_IMPROVEMENT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("conic backend failed: {0}")]
    Backend(#[from] ConicError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("starting trajectory violates {name} (residual {residual:.3e})")]
    InfeasibleStart { name: String, residual: f64 },
}

/// Options for the trust-region loop.
#[derive(Debug, Clone)]
pub struct TrajOptions {
    pub omega0: f64,
    pub omega_min: f64,
    pub max_iters: usize,
    /// Exact-audit feasibility tolerance for accepting a step.
    pub residual_tol: f64,
    pub improvement_tol: f64,
}

impl Default for TrajOptions {
    fn default() -> Self {
        Self {
            omega0: TR_OMEGA0,
            omega_min: TR_OMEGA_MIN,
            max_iters: TR_MAX_ITERS,
            residual_tol: metrics::RESIDUAL_TOL,
            improvement_tol: TR_IMPROVEMENT_TOL,
        }
    }
}

/// Outcome of one refinement run.
#[derive(Debug, Clone)]
pub struct TrajResult {
    pub trajectory: Trajectory,
    /// Exact propulsion energy after each accepted step, starting with the
    /// input trajectory's energy (nonincreasing).
    pub energy_trace: Vec<f64>,
    /// Total subproblem solves.
    pub iterations: usize,
    pub accepted: usize,
    /// Worst exact constraint residual of the returned trajectory.
    pub final_residual: f64,
}

/// Total propulsion energy of a trajectory: Σ_k Σ_n Δ·P(v_{k,n}).
pub fn propulsion_energy(traj: &Trajectory, cfg: &ScenarioConfig) -> Result<f64, ScenarioError> {
    let speeds = velocity_from_waypoints(traj, cfg)?;
    let dt = cfg.slot_duration();
    let mut e = 0.0;
    for per_uav in &speeds {
        for &v in per_uav {
            e += propulsion_power(v, &cfg.propulsion)? * dt;
        }
    }
    Ok(e)
}

/// Received offloading power Ψ = ‖H(u)·w‖² at the AP arrays for one UAV
/// position and beam, with its gradient in the horizontal position.
pub fn offload_power_gradient(
    uav: [f64; 3],
    w: &DVector<Complex64>,
    cfg: &ScenarioConfig,
) -> Result<(f64, [f64; 2]), ChannelError> {
    let h = channel::offload_aggregate(uav, cfg)?;
    let dh = channel::offload_aggregate_derivative(uav, cfg)?;
    let hw = &h * w;
    let psi = hw.norm_squared();
    let gx = 2.0 * hw.dotc(&(&dh.d_x * w)).re;
    let gy = 2.0 * hw.dotc(&(&dh.d_y * w)).re;
    Ok((psi, [gx, gy]))
}

/// Warden-received power Ω = |h(u)^H w|² of one beam, with its gradient in
/// the UAV's horizontal position.
pub fn warden_power_gradient(
    uav: [f64; 3],
    warden: [f64; 3],
    w: &DVector<Complex64>,
    cfg: &ScenarioConfig,
) -> Result<(f64, [f64; 2]), ChannelError> {
    let h = channel::warden_channel(uav, warden, cfg.c0, cfg.n_u, cfg.spacing)?;
    let dh = channel::warden_channel_derivative(uav, warden, cfg.c0, cfg.n_u, cfg.spacing)?;
    let c = h.dotc(w);
    let omega = c.norm_sqr();
    let gx = 2.0 * (c.conj() * dh.d_x.dotc(w)).re;
    let gy = 2.0 * (c.conj() * dh.d_y.dotc(w)).re;
    Ok((omega, [gx, gy]))
}

/// Induced-power speed factor: the positive root of 1/y² = y² + v²/v0².
fn induced_factor(v: f64, p: &PropulsionParams) -> f64 {
    let s = v * v / (2.0 * p.v0 * p.v0);
    ((1.0 + v.powi(4) / (4.0 * p.v0.powi(4))).sqrt() - s).sqrt()
}

/// One Taylor-linearized scalar constraint `value + Σ grad·(u − ũ) ≤ 0`,
/// in the same normalized units as the exact audit.
struct LinRow {
    label: String,
    value: f64,
    /// (uav, free-waypoint index, ∂/∂x, ∂/∂y)
    grad: Vec<(usize, usize, f64, f64)>,
}

/// Builds and solves one trust-region subproblem; returns candidate
/// waypoints, or None when the solver could not produce a usable point.
fn solve_subproblem(
    cfg: &ScenarioConfig,
    traj: &Trajectory,
    rows: &[LinRow],
    samples: &[[f64; 3]],
    omega: f64,
) -> Result<Option<(Vec<Vec<[f64; 2]>>, f64)>, TrajError> {
    let n_slots = cfg.n_slots;
    let dt = cfg.slot_duration();
    let prm = &cfg.propulsion;
    let mut p = Problem::new();

    // Free interior waypoints: indices 1..N−1.
    let mut xv: Vec<Vec<Option<(VarId, VarId)>>> = vec![vec![None; n_slots + 1]; cfg.k()];
    for k in 0..cfg.k() {
        for i in 1..n_slots {
            let x = p.var(format!("u[{k},{i}].x"));
            let y = p.var(format!("u[{k},{i}].y"));
            xv[k][i] = Some((x, y));
        }
    }
    let pos = |k: usize, i: usize, axis: usize| -> LinExpr {
        match xv[k][i] {
            Some((x, y)) => LinExpr::var(if axis == 0 { x } else { y }),
            None => LinExpr::constant(traj.waypoints[k][i][axis]),
        }
    };

    // Trust region around the current point.
    for k in 0..cfg.k() {
        for i in 1..n_slots {
            let dx = pos(k, i, 0) - traj.waypoints[k][i][0];
            let dy = pos(k, i, 1) - traj.waypoints[k][i][1];
            p.soc(LinExpr::constant(omega), vec![dx, dy], format!("trust[{k},{i}]"));
        }
    }

    // Propulsion epigraphs per segment, and the exact speed cap.
    let c_para = 0.5 * prm.d0 * prm.rho0 * prm.s * prm.a;
    let mut objective = LinExpr::constant(cfg.k() as f64 * n_slots as f64 * dt * prm.p0);
    for k in 0..cfg.k() {
        for i in 1..=n_slots {
            let d = [
                pos(k, i, 0) - pos(k, i - 1, 0),
                pos(k, i, 1) - pos(k, i - 1, 1),
            ];
            if xv[k][i].is_none() && xv[k][i - 1].is_none() {
                // Both ends fixed: contributes a constant.
                let seg = crate::scenario::sub2(traj.waypoints[k][i], traj.waypoints[k][i - 1]);
                let v = crate::scenario::hypot2(seg) / dt;
                objective = objective
                    + dt * (prm.p0 * 3.0 * v * v / (prm.u_tip * prm.u_tip)
                        + c_para * v.powi(3)
                        + prm.p_h * induced_factor(v, prm));
                continue;
            }
            p.soc(
                LinExpr::constant(dt * cfg.v_max * (1.0 - 1e-9)),
                d.to_vec(),
                format!("speed[{k},{i}]"),
            );
            // Quadratic term: v2 ≥ ‖d/Δ‖².
            let v2 = p.var(format!("v2[{k},{i}]"));
            p.rsoc(
                LinExpr::term(v2, 0.5),
                LinExpr::constant(1.0),
                d.iter().map(|e| e.scale(1.0 / dt)).collect(),
                format!("v2[{k},{i}]"),
            );
            // Cubic term: v1 ≥ ‖d‖/Δ, s3 ≥ v1³.
            let v1 = p.var(format!("v1[{k},{i}]"));
            p.soc(LinExpr::term(v1, dt), d.to_vec(), format!("v1[{k},{i}]"));
            let s3 = p.var(format!("s3[{k},{i}]"));
            p.cubic_epigraph(LinExpr::var(s3), LinExpr::var(v1), format!("s3[{k},{i}]"));
            // Induced term: η ≥ 1/y² stays conic; the identity's right side
            // y² + v²/v0² is tangent-lowered at the current point.
            let y = p.var(format!("y[{k},{i}]"));
            let eta = p.var(format!("eta[{k},{i}]"));
            p.inverse_square_epigraph(LinExpr::var(eta), LinExpr::var(y), format!("ind[{k},{i}]"));
            let seg = crate::scenario::sub2(traj.waypoints[k][i], traj.waypoints[k][i - 1]);
            let v_now = crate::scenario::hypot2(seg) / dt;
            let y_now = induced_factor(v_now, prm);
            // Tangent of v² in the waypoints: (2·d̃ᵀd − ‖d̃‖²)/Δ².
            let mut v2_tan = LinExpr::constant(-(seg[0] * seg[0] + seg[1] * seg[1]));
            v2_tan = v2_tan + d[0].scale(2.0 * seg[0]) + d[1].scale(2.0 * seg[1]);
            let rhs = LinExpr::term(y, 2.0 * y_now) - y_now * y_now
                + v2_tan.scale(1.0 / (dt * dt * prm.v0 * prm.v0));
            p.nonneg(rhs - LinExpr::var(eta), format!("ind_tan[{k},{i}]"));
            objective = objective
                + LinExpr::term(v2, dt * prm.p0 * 3.0 / (prm.u_tip * prm.u_tip))
                + LinExpr::term(s3, dt * c_para)
                + LinExpr::term(y, dt * prm.p_h);
        }
    }

    // Separation floors (tangent restrictions of the squared distance).
    let d2 = cfg.d_min * cfg.d_min;
    let separation = |p: &mut Problem,
                          k: usize,
                          i: usize,
                          other: Option<(usize, usize)>,
                          fixed: Option<[f64; 3]>,
                          label: String| {
        let alt = cfg.uav_altitudes[k];
        let (center, dz) = match (other, fixed) {
            (Some((j, jj)), None) => {
                (traj.waypoints[j][jj], cfg.uav_altitudes[j] - alt)
            }
            (None, Some(c)) => ([c[0], c[1]], c[2] - alt),
            _ => unreachable!(),
        };
        let rhs = d2 - dz * dz;
        if rhs <= 0.0 {
            return;
        }
        let here = traj.waypoints[k][i];
        let e = [here[0] - center[0], here[1] - center[1]];
        if e[0] * e[0] + e[1] * e[1] < 1e-12 {
            return;
        }
        let (rx, ry) = match other {
            Some((j, jj)) => (pos(k, i, 0) - pos(j, jj, 0), pos(k, i, 1) - pos(j, jj, 1)),
            None => (pos(k, i, 0) - center[0], pos(k, i, 1) - center[1]),
        };
        let tangent =
            rx.scale(2.0 * e[0]) + ry.scale(2.0 * e[1]) - (e[0] * e[0] + e[1] * e[1]) - rhs;
        p.nonneg(tangent, label);
    };
    for n in 0..n_slots.saturating_sub(1) {
        let i = n + 1;
        for k in 0..cfg.k() {
            for j in k + 1..cfg.k() {
                separation(&mut p, k, i, Some((j, i)), None, format!("sep_uav[{k},{j},{n}]"));
            }
            for (l, w) in cfg.warden_positions.iter().enumerate() {
                separation(&mut p, k, i, None, Some(*w), format!("sep_w[{k},{l},{n}]"));
            }
            for (qi, qt) in samples.iter().enumerate() {
                separation(&mut p, k, i, None, Some(*qt), format!("sep_t[{k},{qi},{n}]"));
            }
        }
    }

    // Taylor rows from the communication/sensing/covertness audit, with a
    // no-worsening allowance for rows already at the boundary.
    for row in rows {
        let allowance = row.value.max(0.0);
        let mut e = LinExpr::constant(allowance - row.value);
        for &(k, i, gx, gy) in &row.grad {
            e = e - (pos(k, i, 0) - traj.waypoints[k][i][0]).scale(gx);
            e = e - (pos(k, i, 1) - traj.waypoints[k][i][1]).scale(gy);
        }
        p.nonneg(e, row.label.clone());
    }

    p.set_objective(objective);
    let sol = p.solve()?;
    if !sol.status.is_acceptable() {
        return Ok(None);
    }
    let mut waypoints = traj.waypoints.clone();
    for k in 0..cfg.k() {
        for i in 1..n_slots {
            if let Some((x, y)) = xv[k][i] {
                waypoints[k][i] = [sol.value_var(x), sol.value_var(y)];
            }
        }
    }
    Ok(Some((waypoints, sol.objective)))
}

/// Linearizes every position-dependent audit row around `traj`.
fn linearize_rows(
    cfg: &ScenarioConfig,
    alloc: &ResourceAllocation,
    traj: &Trajectory,
    channels: &ChannelSet,
) -> Result<Vec<LinRow>, TrajError> {
    let noise_rx = metrics::receiver_noise(cfg);
    let sigma_w2 = cfg.noise_warden;
    let nq = channels.sensing.len();
    let mut rows = Vec::new();

    // Slots whose waypoint is free: n = 0..N−2 (slot N−1 sits on the
    // pinned endpoint).
    for n in 0..cfg.n_slots.saturating_sub(1) {
        let i = n + 1;
        let slot = &alloc.slots[n];
        let delta = cfg.slot_duration();
        let (t0, t1) = (slot.t_compute, slot.t_offload);

        // Per-UAV offloading powers and gradients, normalized by the
        // receiver noise.
        let mut psi = Vec::with_capacity(cfg.k());
        let mut dpsi = Vec::with_capacity(cfg.k());
        for k in 0..cfg.k() {
            let (v, g) = offload_power_gradient(traj.position3(cfg, k, n), &slot.beams[k], cfg)?;
            psi.push(v / noise_rx);
            dpsi.push([g[0] / noise_rx, g[1] / noise_rx]);
        }
        let s_tot: f64 = psi.iter().sum();

        // Sensing covariance responses at each sample (position-free).
        let t0_q: Vec<f64> = (0..nq)
            .map(|q| metrics::trace_quad(&channels.sensing[q], &slot.cov_compute) / noise_rx)
            .collect();
        let t1_q: Vec<f64> = (0..nq)
            .map(|q| metrics::trace_quad(&channels.sensing[q], &slot.cov_offload) / noise_rx)
            .collect();

        // Sensing floor per sample.
        for q in 0..nq {
            let denom = 1.0 + s_tot;
            let e_q = (t0 / delta) * t0_q[q] + (t1 / delta) * t1_q[q] / denom;
            let value = (cfg.gamma_min - e_q) / cfg.gamma_min;
            let coef = (t1 / delta) * t1_q[q] / (denom * denom * cfg.gamma_min);
            let grad = (0..cfg.k())
                .map(|k| (k, i, coef * dpsi[k][0], coef * dpsi[k][1]))
                .collect();
            rows.push(LinRow { label: format!("sen[q={q},n={n}]"), value, grad });
        }

        // Offloading throughput per UAV and sample.
        for k in 0..cfg.k() {
            let i_bits = cfg.task_bits(k, n);
            let l_local = slot.f_local[k] * delta / cfg.cycles_per_bit[k];
            let needed = i_bits - l_local;
            for q in 0..nq {
                let den = 1.0 + t1_q[q] + (s_tot - psi[k]);
                let gam = psi[k] / den;
                let l_o = t1 * cfg.bandwidth * (1.0 + gam).log2();
                let value = (needed - l_o) / i_bits;
                let factor = -t1 * cfg.bandwidth
                    / (std::f64::consts::LN_2 * (1.0 + gam) * i_bits);
                let mut grad = Vec::with_capacity(cfg.k());
                for j in 0..cfg.k() {
                    let dg = if j == k {
                        [dpsi[j][0] / den, dpsi[j][1] / den]
                    } else {
                        let c = -psi[k] / (den * den);
                        [c * dpsi[j][0], c * dpsi[j][1]]
                    };
                    grad.push((j, i, factor * dg[0], factor * dg[1]));
                }
                rows.push(LinRow { label: format!("com1[k={k},q={q},n={n}]"), value, grad });
            }
        }

        // Covertness per warden.
        for (l, g_jam) in channels.jamming.iter().enumerate() {
            let g_hat = g_jam.scale(1.0 / sigma_w2.sqrt());
            let lam0 = metrics::quad_form(&g_hat, &slot.cov_compute) + 1.0;
            let mut mu = 0.0;
            let mut grad = Vec::with_capacity(cfg.k());
            for k in 0..cfg.k() {
                let (v, g) = warden_power_gradient(
                    traj.position3(cfg, k, n),
                    cfg.warden_positions[l],
                    &slot.beams[k],
                    cfg,
                )?;
                mu += v / (sigma_w2 * lam0);
                let c = 1.0 / (sigma_w2 * lam0 * cfg.mu_max);
                grad.push((k, i, c * g[0], c * g[1]));
            }
            let value = (mu - cfg.mu_max) / cfg.mu_max;
            rows.push(LinRow { label: format!("cov[l={l},n={n}]"), value, grad });
        }
    }
    Ok(rows)
}

/// Audits one candidate exactly: worst constraint residual and propulsion
/// energy.
fn audit(
    cfg: &ScenarioConfig,
    alloc: &ResourceAllocation,
    traj: &Trajectory,
    samples: &[[f64; 3]],
) -> Result<(f64, f64, ChannelSet), TrajError> {
    let channels = ChannelSet::build(cfg, traj, samples)?;
    let report = metrics::check_p0(alloc, traj, &channels, samples, cfg)?;
    let energy = propulsion_energy(traj, cfg)?;
    Ok((report.max_residual(), energy, channels))
}

/// Refines the trajectory by trust-region steps, keeping the allocation
/// fixed. The returned trajectory is always exactly feasible, and its
/// propulsion energy never exceeds the input's.
pub fn refine_trajectory(
    cfg: &ScenarioConfig,
    alloc: &ResourceAllocation,
    traj0: &Trajectory,
    samples: &[[f64; 3]],
    opts: &TrajOptions,
) -> Result<TrajResult, TrajError> {
    let (res0, energy0, mut channels) = audit(cfg, alloc, traj0, samples)?;
    if res0 > opts.residual_tol {
        let channels0 = ChannelSet::build(cfg, traj0, samples)?;
        let report = metrics::check_p0(alloc, traj0, &channels0, samples, cfg)?;
        let worst = report.worst().cloned();
        return Err(TrajError::InfeasibleStart {
            name: worst.map_or_else(|| "unknown".into(), |e| e.name),
            residual: res0,
        });
    }
    let mut traj = traj0.clone();
    let mut energy = energy0;
    let mut final_residual = res0;
    let mut trace = vec![energy0];
    let mut omega = opts.omega0;
    let mut iterations = 0;
    let mut accepted = 0;

    // Nothing to move when every waypoint is pinned.
    if cfg.n_slots < 2 {
        return Ok(TrajResult {
            trajectory: traj,
            energy_trace: trace,
            iterations,
            accepted,
            final_residual,
        });
    }

    while omega >= opts.omega_min && iterations < opts.max_iters {
        iterations += 1;
        let rows = linearize_rows(cfg, alloc, &traj, &channels)?;
        let step = solve_subproblem(cfg, &traj, &rows, samples, omega)?;
        let Some((waypoints, predicted)) = step else {
            omega *= 0.5;
            continue;
        };
        let floor = energy - opts.improvement_tol * energy.abs().max(1.0);
        if predicted >= floor {
            // The model sees no further progress at this radius; smaller
            // radii only restrict it further.
            break;
        }
        let cand = Trajectory { waypoints };
        let (res, cand_energy, cand_channels) = audit(cfg, alloc, &cand, samples)?;
        if res <= opts.residual_tol && cand_energy < floor {
            traj = cand;
            channels = cand_channels;
            energy = cand_energy;
            final_residual = res;
            trace.push(energy);
            accepted += 1;
        } else {
            omega *= 0.5;
        }
    }

    Ok(TrajResult {
        trajectory: traj,
        energy_trace: trace,
        iterations,
        accepted,
        final_residual,
    })
}
