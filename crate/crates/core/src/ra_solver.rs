//! Per-slot resource allocation (beamformers, sensing covariances, phase
//! split, CPU frequencies) by successive convex approximation.
//!
//! Each iteration solves one conic subproblem in which every nonconvex
//! term has been replaced by a global inner bound — exponentials by their
//! tangent under-estimator κ, received powers by quadratic tangents, and
//! the rate by its softplus tangent — so the feasible set of every
//! subproblem is contained in the original one and the recovered
//! allocation always satisfies the original constraints to solver
//! accuracy. Objective values are therefore nonincreasing across
//! iterations.
//!
//! Internally the program is normalized: AP-receiver powers in units of
//! M·N_R·σ_R², warden powers in units of σ_W², frequencies in GHz, data
//! in Gbit, work in Gcycles. Recovered allocations are reported in SI
//! units.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::conic::{ConicStatus, CxVecExpr, HermExpr, LinExpr, Problem, VarId};
use crate::metrics::{self, ResourceAllocation, SlotAllocation};
use crate::scenario::ScenarioConfig;

/// Iteration cap for the convex-approximation loop.
pub const SCA_MAX_ITERS: usize = 30;
/// Relative objective-improvement threshold for convergence.
pub const SCA_REL_TOL: f64 = 1e-4;
/// Tolerated relative objective increase before the loop is stopped.
pub const MONOTONE_SLACK: f64 = 1e-9;

const LOG_LO: f64 = -46.0;
const LOG_HI: f64 = 46.0;
const RESTORATION_ROUNDS: usize = 5;
const SLACK_TOL: f64 = 1e-7;
/// Safety shrink applied to binding budget rows so that recovered points
/// stay inside the audited tolerance despite solver round-off.
const COVERT_MARGIN: f64 = 1e-5;
const POWER_MARGIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RaError {
    #[error(
        "slot {slot}: no feasible allocation found; most violated family: {family} \
         (restoration slack {slack:.3e})"
    )]
    Infeasible { slot: usize, family: String, slack: f64 },
    #[error("slot {slot}: conic backend failed: {source}")]
    Backend {
        slot: usize,
        #[source]
        source: crate::conic::ConicError,
    },
    #[error("slot {slot}: solver returned unusable status {status:?}")]
    BadStatus { slot: usize, status: ConicStatus },
}

/// Affine under-estimator of e^x around x̃: κ(x; x̃) = e^{x̃}(1 + x − x̃).
pub fn kappa_value(x: f64, x_tilde: f64) -> f64 {
    x_tilde.exp() * (1.0 + x - x_tilde)
}

/// κ applied to an affine expression.
fn kappa(x: LinExpr, x_tilde: f64) -> LinExpr {
    let e = x_tilde.exp();
    x.scale(e) + e * (1.0 - x_tilde)
}

/// Structural restriction on the beamformers and sensing covariances.
#[derive(Debug, Clone)]
pub enum BeamPolicy {
    /// Free beamformers and free Hermitian covariances.
    Full,
    /// Power control only: each UAV transmits along a fixed unit
    /// direction and both covariances follow one fixed unit-trace
    /// profile, all scaled by nonnegative variables.
    PowerOnly {
        beam_dirs: Vec<DVector<Complex64>>,
        cov_profile: DMatrix<Complex64>,
    },
}

/// Options controlling one slot solve.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub policy: BeamPolicy,
    /// Overrides the local-CPU frequency cap (Hz); `Some(0.0)` forces all
    /// computation to be offloaded.
    pub f_local_cap: Option<f64>,
    /// Fixes t_compute = ratio · t_offload.
    pub phase_ratio: Option<f64>,
    /// Overrides the per-slot AP sensing power budget (W).
    pub p_ap_override: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            policy: BeamPolicy::Full,
            f_local_cap: None,
            phase_ratio: None,
            p_ap_override: None,
            max_iters: SCA_MAX_ITERS,
            rel_tol: SCA_REL_TOL,
        }
    }
}

/// Result of one slot solve.
#[derive(Debug, Clone)]
pub struct SlotSolveResult {
    pub alloc: SlotAllocation,
    /// Subproblem objective after each accepted iteration (nonincreasing).
    pub objective_trace: Vec<f64>,
    /// Exact (non-propulsion) energy of the recovered allocation (J).
    pub energy: f64,
    pub iterations: usize,
    pub used_restoration: bool,
}

/// Eigenvector of a Hermitian matrix for its largest eigenvalue.
pub(crate) fn principal_eigenvector(m: &DMatrix<Complex64>) -> (f64, DVector<Complex64>) {
    let sym = (m + m.adjoint()).scale(0.5);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let v = eig.eigenvectors.column(best).into_owned();
    (eig.eigenvalues[best], v)
}

fn re_trace_product(s: &DMatrix<Complex64>, r: &DMatrix<Complex64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            acc += (s[(i, j)] * r[(j, i)]).re;
        }
    }
    acc
}

/// Normalized per-slot constants shared by all iterations.
struct SlotContext<'a> {
    cfg: &'a ScenarioConfig,
    slot: usize,
    delta: f64,
    nk: usize,
    nl: usize,
    nq: usize,
    dim: usize,
    /// G_q^H G_q / (M N_R σ_R²), one per sample point.
    s_q: Vec<DMatrix<Complex64>>,
    /// H_k^H H_k / (M N_R σ_R²).
    m_hat: Vec<DMatrix<Complex64>>,
    /// H_k / sqrt(M N_R σ_R²).
    x_mat: Vec<DMatrix<Complex64>>,
    /// g_l / σ_W.
    g_w: Vec<DVector<Complex64>>,
    /// h_{l,k} / σ_W.
    h_w: Vec<Vec<DVector<Complex64>>>,
    /// Row scaling for the covertness cone of each warden.
    gw_scale: Vec<f64>,
    /// Per-UAV task work in Gcycles.
    i_gcycles: Vec<f64>,
    b_ghz: f64,
    cycles_per_bit: Vec<f64>,
    p_u_max: f64,
    p_ap_max: f64,
    f_local_cap_g: f64,
    f_edge_max_g: f64,
    /// Local CPU energy per GHz³ over a whole slot (J).
    e_local: f64,
    /// Edge CPU energy per GHz³·s (J).
    e_edge: f64,
    mu_max: f64,
    gamma_min: f64,
    tau_lo: f64,
    tau_hi: f64,
    z_lo: f64,
    z_hi: f64,
}

impl<'a> SlotContext<'a> {
    fn new(
        cfg: &'a ScenarioConfig,
        channels: &'a ChannelSet,
        slot: usize,
        opts: &SolveOptions,
    ) -> Self {
        let noise_rx = metrics::receiver_noise(cfg);
        let dim = cfg.m() * cfg.n_t;
        let s_q = channels
            .sensing
            .iter()
            .map(|g| (g.adjoint() * g).scale(1.0 / noise_rx))
            .collect();
        let m_hat: Vec<_> = channels.offload[slot]
            .iter()
            .map(|h| (h.adjoint() * h).scale(1.0 / noise_rx))
            .collect();
        let x_mat = channels.offload[slot]
            .iter()
            .map(|h| h.scale(1.0 / noise_rx.sqrt()))
            .collect();
        let sigma_w = cfg.noise_warden.sqrt();
        let g_w: Vec<DVector<Complex64>> = channels
            .jamming
            .iter()
            .map(|g| g.scale(1.0 / sigma_w))
            .collect();
        let h_w = (0..cfg.l())
            .map(|l| {
                (0..cfg.k())
                    .map(|k| channels.warden[slot][l][k].scale(1.0 / sigma_w))
                    .collect()
            })
            .collect();
        let gw_scale = g_w.iter().map(|g| g.norm_squared().max(1.0)).collect();
        let i_gcycles = (0..cfg.k())
            .map(|k| cfg.task_bits(k, slot) * cfg.cycles_per_bit[k] / 1e9)
            .collect();
        let delta = cfg.slot_duration();
        let f_local_cap_g = opts
            .f_local_cap
            .map_or(cfg.f_local_max, |c| c.min(cfg.f_local_max))
            / 1e9;
        Self {
            cfg,
            slot,
            delta,
            nk: cfg.k(),
            nl: cfg.l(),
            nq: channels.sensing.len(),
            dim,
            s_q,
            m_hat,
            x_mat,
            g_w,
            h_w,
            gw_scale,
            i_gcycles,
            b_ghz: cfg.bandwidth / 1e9,
            cycles_per_bit: cfg.cycles_per_bit.clone(),
            p_u_max: cfg.p_uav_max,
            p_ap_max: opts.p_ap_override.unwrap_or(cfg.p_ap_max),
            f_local_cap_g,
            f_edge_max_g: cfg.f_edge_max / 1e9,
            e_local: cfg.v_local * 1e27 * delta,
            e_edge: cfg.v_edge * 1e27,
            mu_max: cfg.mu_max,
            gamma_min: cfg.gamma_min,
            tau_lo: (1e-6 * delta).ln(),
            tau_hi: delta.ln(),
            z_lo: (1e-6f64).ln(),
            z_hi: (cfg.f_edge_max / 1e9).ln(),
        }
    }

    /// Normalized uplink power of one beam: w^H M̂_k w.
    fn s_hat(&self, k: usize, w: &DVector<Complex64>) -> f64 {
        metrics::quad_form(w, &self.m_hat[k])
    }
}

/// Linearization state carried between iterations.
#[derive(Debug, Clone)]
struct Iterate {
    tau0: f64,
    tau1: f64,
    z: Vec<f64>,
    a0: f64,
    a1: f64,
    b: f64,
    zeta: Vec<f64>,
    gamma: Vec<f64>,
    r: Vec<f64>,
    p0: f64,
    p1: f64,
    p2: f64,
    w: Vec<DVector<Complex64>>,
}

fn clamp_log(x: f64) -> f64 {
    if x.is_finite() {
        x.clamp(LOG_LO, LOG_HI)
    } else {
        LOG_LO
    }
}

fn softplus_bits(gamma: f64) -> f64 {
    gamma.exp().ln_1p() / std::f64::consts::LN_2
}

impl Iterate {
    /// Tight auxiliary values for a concrete decision point.
    #[allow(clippy::too_many_arguments)]
    fn from_point(
        ctx: &SlotContext,
        w: Vec<DVector<Complex64>>,
        r0: &DMatrix<Complex64>,
        r1: &DMatrix<Complex64>,
        f_edge_g: &[f64],
        t0: f64,
        t1: f64,
    ) -> Self {
        let tau0 = t0.max(1e-300).ln().clamp(ctx.tau_lo, ctx.tau_hi);
        let tau1 = t1.max(1e-300).ln().clamp(ctx.tau_lo, ctx.tau_hi);
        let z = f_edge_g
            .iter()
            .map(|f| f.max(1e-300).ln().clamp(ctx.z_lo, ctx.z_hi))
            .collect();
        let t0_q: Vec<f64> = ctx.s_q.iter().map(|s| re_trace_product(s, r0)).collect();
        let t1_q: Vec<f64> = ctx.s_q.iter().map(|s| re_trace_product(s, r1)).collect();
        let s_hat: Vec<f64> = (0..ctx.nk).map(|k| ctx.s_hat(k, &w[k])).collect();
        let total: f64 = s_hat.iter().sum();
        let a0 = clamp_log(t0_q.iter().cloned().fold(f64::INFINITY, f64::min).ln());
        let a1 = clamp_log(t1_q.iter().cloned().fold(f64::INFINITY, f64::min).ln());
        let b = clamp_log((1.0 + total).ln());
        let mut zeta = Vec::with_capacity(ctx.nk);
        let mut gamma = Vec::with_capacity(ctx.nk);
        let mut r = Vec::with_capacity(ctx.nk);
        for k in 0..ctx.nk {
            let den = t1_q
                .iter()
                .map(|t| 1.0 + t + total - s_hat[k])
                .fold(f64::NEG_INFINITY, f64::max);
            let zk = clamp_log(den.ln());
            let gk = clamp_log(s_hat[k].max(1e-300).ln() - zk);
            zeta.push(zk);
            gamma.push(gk);
            r.push(clamp_log(softplus_bits(gk).max(1e-300).ln()));
        }
        let p0 = clamp_log(metrics::trace_re(r0).max(1e-300).ln());
        let p1 = clamp_log(metrics::trace_re(r1).max(1e-300).ln());
        // p2 tracks the unnormalized total beam power Σ‖w_k‖² (W).
        let raw_power: f64 = w.iter().map(|wk| wk.norm_squared()).sum();
        let p2 = clamp_log(raw_power.max(1e-300).ln());
        Self { tau0, tau1, z, a0, a1, b, zeta, gamma, r, p0, p1, p2, w }
    }

    fn from_alloc(ctx: &SlotContext, alloc: &SlotAllocation) -> Self {
        let f_edge_g: Vec<f64> = alloc.f_edge.iter().map(|f| f / 1e9).collect();
        Self::from_point(
            ctx,
            alloc.beams.clone(),
            &alloc.cov_compute,
            &alloc.cov_offload,
            &f_edge_g,
            alloc.t_compute,
            alloc.t_offload,
        )
    }
}

/// Builds a heuristic feasible starting point: sensing power beamformed at
/// the sample area, beams matched to the offloading channel with warden
/// directions projected out (when the array has spare dimensions) and
/// scaled inside the covertness budget, local CPU at its cap, edge CPU
/// sized to the leftover work.
fn initial_point(ctx: &SlotContext, opts: &SolveOptions) -> Iterate {
    let (r0, r1) = match &opts.policy {
        BeamPolicy::Full => {
            let mut mean = DMatrix::<Complex64>::zeros(ctx.dim, ctx.dim);
            for s in &ctx.s_q {
                mean += s;
            }
            let (_, v) = principal_eigenvector(&mean);
            let r = (&v * v.adjoint()).scale(ctx.p_ap_max);
            (r.clone(), r)
        }
        BeamPolicy::PowerOnly { cov_profile, .. } => {
            let r = cov_profile.scale(ctx.p_ap_max);
            (r.clone(), r)
        }
    };

    // Unit beam directions.
    let dirs: Vec<DVector<Complex64>> = match &opts.policy {
        BeamPolicy::PowerOnly { beam_dirs, .. } => beam_dirs.clone(),
        BeamPolicy::Full => (0..ctx.nk)
            .map(|k| {
                // Null space of the warden rows, when it exists.
                let n_u = ctx.cfg.n_u;
                let mut proj = DMatrix::<Complex64>::identity(n_u, n_u);
                if n_u > ctx.nl {
                    for l in 0..ctx.nl {
                        let h = &ctx.h_w[l][k];
                        let hp = &proj * h;
                        let n2 = hp.norm_squared();
                        if n2 > 1e-30 {
                            proj -= (&hp * hp.adjoint()).scale(1.0 / n2);
                        }
                    }
                }
                let m_proj = &proj * &ctx.m_hat[k] * &proj;
                let (lam, v) = principal_eigenvector(&m_proj);
                if lam > 1e-30 {
                    v
                } else {
                    principal_eigenvector(&ctx.m_hat[k]).1
                }
            })
            .collect(),
    };

    // Power per UAV within the per-warden covertness budget.
    let beams: Vec<DVector<Complex64>> = (0..ctx.nk)
        .map(|k| {
            let mut p = ctx.p_u_max;
            for l in 0..ctx.nl {
                let lam0 = metrics::quad_form(&ctx.g_w[l], &r0) + 1.0;
                let cross = ctx.h_w[l][k].dotc(&dirs[k]).norm_sqr();
                if cross > 1e-30 {
                    p = p.min(0.95 * ctx.mu_max * lam0 / (ctx.nk as f64 * cross));
                }
            }
            dirs[k].scale(p.max(1e-12).sqrt())
        })
        .collect();

    let (t0, t1) = match opts.phase_ratio {
        Some(eta) => (ctx.delta * eta / (1.0 + eta), ctx.delta / (1.0 + eta)),
        None => (ctx.delta / 2.0, ctx.delta / 2.0),
    };
    let f_edge_g: Vec<f64> = (0..ctx.nk)
        .map(|k| {
            let local = ctx.f_local_cap_g * ctx.delta;
            let rem = (ctx.i_gcycles[k] - local).max(0.0);
            (rem / t0).clamp(1e-6, ctx.f_edge_max_g / ctx.nk as f64)
        })
        .collect();
    Iterate::from_point(ctx, beams, &r0, &r1, &f_edge_g, t0, t1)
}

/// Variable handles of one assembled subproblem.
struct Handles {
    tau0: VarId,
    tau1: VarId,
    z: Vec<VarId>,
    f_l: Vec<VarId>,
    a0: VarId,
    a1: VarId,
    b: VarId,
    zeta: Vec<VarId>,
    gamma: Vec<VarId>,
    r: Vec<VarId>,
    p0: VarId,
    p1: VarId,
    p2: VarId,
    w: Vec<CxVecExpr>,
    r0: HermExpr,
    r1: HermExpr,
    slacks: Vec<(String, VarId)>,
}

/// Assembles the convex subproblem around `it`. With `restoration` the
/// four coupling families (sensing, both task constraints, covertness)
/// receive nonnegative slacks and the objective becomes their sum.
fn build_p12(ctx: &SlotContext, it: &Iterate, opts: &SolveOptions, restoration: bool) -> (Problem, Handles) {
    let mut p = Problem::new();
    let lv = LinExpr::var;

    let tau0 = p.var_bounded("tau0", ctx.tau_lo, ctx.tau_hi);
    let tau1 = p.var_bounded("tau1", ctx.tau_lo, ctx.tau_hi);
    if let Some(eta) = opts.phase_ratio {
        p.zero(lv(tau0) - lv(tau1) - eta.ln(), "phase_ratio");
    }
    let z: Vec<VarId> =
        (0..ctx.nk).map(|k| p.var_bounded(format!("z[{k}]"), ctx.z_lo, ctx.z_hi)).collect();
    let f_l: Vec<VarId> = (0..ctx.nk)
        .map(|k| p.var_bounded(format!("f_l[{k}]"), 0.0, ctx.f_local_cap_g.max(0.0)))
        .collect();

    let (r0, r1, w): (HermExpr, HermExpr, Vec<CxVecExpr>) = match &opts.policy {
        BeamPolicy::Full => {
            let r0 = p.herm_var("R0", ctx.dim);
            let r1 = p.herm_var("R1", ctx.dim);
            p.psd(&r0, "R0_psd");
            p.psd(&r1, "R1_psd");
            let w = (0..ctx.nk).map(|k| p.cx_vec_var(format!("w[{k}]"), ctx.cfg.n_u)).collect();
            (r0, r1, w)
        }
        BeamPolicy::PowerOnly { beam_dirs, cov_profile } => {
            let rho0 = p.var_bounded("rho0", 0.0, ctx.p_ap_max);
            let rho1 = p.var_bounded("rho1", 0.0, ctx.p_ap_max);
            let r0 = HermExpr::scaled_matrix(rho0, cov_profile);
            let r1 = HermExpr::scaled_matrix(rho1, cov_profile);
            let w = (0..ctx.nk)
                .map(|k| {
                    let s = p.var_bounded(format!("ws[{k}]"), 0.0, ctx.p_u_max.sqrt());
                    CxVecExpr::scaled_direction(s, &beam_dirs[k])
                })
                .collect();
            (r0, r1, w)
        }
    };

    let bound = |p: &mut Problem, name: &str| p.var_bounded(name, LOG_LO, LOG_HI);
    let a0 = bound(&mut p, "a0");
    let a1 = bound(&mut p, "a1");
    let b = bound(&mut p, "b");
    let zeta: Vec<VarId> = (0..ctx.nk).map(|k| bound(&mut p, &format!("zeta[{k}]"))).collect();
    let gamma: Vec<VarId> = (0..ctx.nk).map(|k| bound(&mut p, &format!("gamma[{k}]"))).collect();
    let r: Vec<VarId> = (0..ctx.nk).map(|k| bound(&mut p, &format!("r[{k}]"))).collect();
    let p0 = bound(&mut p, "p0");
    let p1 = bound(&mut p, "p1");
    let p2 = bound(&mut p, "p2");

    let mut slacks: Vec<(String, VarId)> = Vec::new();
    let mut slack = |p: &mut Problem, name: String| -> LinExpr {
        if restoration {
            let v = p.var(format!("slack.{name}"));
            p.nonneg(lv(v), format!("slack.{name}>=0"));
            slacks.push((name, v));
            lv(v)
        } else {
            LinExpr::zero()
        }
    };

    // Per-sample sensing power floors: e^{a0} ≤ tr(S_q R0), e^{a1} ≤ tr(S_q R1).
    for q in 0..ctx.nq {
        p.exp_cone(lv(a0), LinExpr::constant(1.0), r0.trace_with(&ctx.s_q[q]), format!("sen_quiet[q={q}]"));
        p.exp_cone(lv(a1), LinExpr::constant(1.0), r1.trace_with(&ctx.s_q[q]), format!("sen_busy[q={q}]"));
    }
    // Slot-average sensing requirement (linearized products of exponentials).
    let radar = kappa(lv(tau0) + lv(a0), it.tau0 + it.a0)
        + kappa(lv(tau1) + lv(a1) - lv(b), it.tau1 + it.a1 - it.b)
        + slack(&mut p, "sensing".into());
    p.nonneg(radar - ctx.gamma_min * ctx.delta, "radar");

    // Total uplink power bound: κ(b) − 1 ≥ Σ_k ‖H_k w_k‖²/(MN_Rσ²).
    let x_k: Vec<CxVecExpr> =
        (0..ctx.nk).map(|k| CxVecExpr::mat_apply(&ctx.x_mat[k], &w[k])).collect();
    {
        let mut stack = Vec::new();
        for xk in &x_k {
            stack.extend(xk.flatten());
        }
        let a = (kappa(lv(b), it.b) - 1.0).scale(0.5);
        p.rsoc(a, LinExpr::constant(1.0), stack, "uplink_total");
    }

    // Per-(k, q) interference bound: κ(ζ_k) ≥ 1 + tr(S_q R1) + Σ_{i≠k}‖x_i‖².
    for k in 0..ctx.nk {
        for q in 0..ctx.nq {
            let lead = (kappa(lv(zeta[k]), it.zeta[k]) - 1.0 - r1.trace_with(&ctx.s_q[q])).scale(0.5);
            let mut stack = Vec::new();
            for (i, xi) in x_k.iter().enumerate() {
                if i != k {
                    stack.extend(xi.flatten());
                }
            }
            if stack.is_empty() {
                p.nonneg(lead.scale(2.0), format!("den[k={k},q={q}]"));
            } else {
                p.rsoc(lead, LinExpr::constant(1.0), stack, format!("den[k={k},q={q}]"));
            }
        }
    }

    // SINR floor: tangent of w^H M̂_k w at w̃ dominates e^{γ_k + ζ_k}.
    for k in 0..ctx.nk {
        let v = &ctx.m_hat[k] * &it.w[k];
        let const_part = metrics::quad_form(&it.w[k], &ctx.m_hat[k]);
        let tangent = w[k].dotc_const(&v).re.scale(2.0) - const_part;
        p.exp_cone(lv(gamma[k]) + lv(zeta[k]), LinExpr::constant(1.0), tangent, format!("sinr[k={k}]"));
    }

    // Rate floor: e^{r_k} ≤ tangent of log2(1 + e^γ) at γ̃.
    for k in 0..ctx.nk {
        let eg = it.gamma[k].exp();
        let slope = eg / (std::f64::consts::LN_2 * (1.0 + eg));
        let inter = softplus_bits(it.gamma[k]) - slope * it.gamma[k];
        let tangent = LinExpr::term(gamma[k], slope) + inter;
        p.exp_cone(lv(r[k]), LinExpr::constant(1.0), tangent, format!("rate[k={k}]"));
    }

    // Task-split rows, in Gcycles.
    for k in 0..ctx.nk {
        let com1 = LinExpr::term(f_l[k], ctx.delta)
            + kappa(lv(tau1) + lv(r[k]), it.tau1 + it.r[k])
                .scale(ctx.b_ghz * ctx.cycles_per_bit[k])
            + slack(&mut p, format!("com1[k={k}]"));
        p.nonneg(com1 - ctx.i_gcycles[k], format!("com1[k={k}]"));
        let com2 = LinExpr::term(f_l[k], ctx.delta)
            + kappa(lv(tau0) + lv(z[k]), it.tau0 + it.z[k])
            + slack(&mut p, format!("com2[k={k}]"));
        p.nonneg(com2 - ctx.i_gcycles[k], format!("com2[k={k}]"));
    }

    // Covertness: Σ_k |ĥ_{l,k}^H w_k|² ≤ μ_max(ĝ^H R0 ĝ + 1) + ĝ^H(R0 − R1)ĝ.
    let mu_eff = ctx.mu_max * (1.0 - COVERT_MARGIN);
    for l in 0..ctx.nl {
        let scale = ctx.gw_scale[l];
        let q0 = r0.quad_form(&ctx.g_w[l]);
        let q1 = r1.quad_form(&ctx.g_w[l]);
        let rhs = q0.scale(1.0 + mu_eff) - q1 + mu_eff;
        let a = (rhs.scale(1.0 / scale) + slack(&mut p, format!("covert[l={l}]"))).scale(0.5);
        let inv_sqrt = 1.0 / scale.sqrt();
        let mut stack = Vec::new();
        for (k, wk) in w.iter().enumerate() {
            let cross = wk.dotc_const(&ctx.h_w[l][k]);
            stack.push(cross.re.scale(inv_sqrt));
            stack.push(cross.im.scale(inv_sqrt));
        }
        p.rsoc(a, LinExpr::constant(1.0), stack, format!("covert[l={l}]"));
    }

    // Phase durations: e^{τ} epigraphs summing below the slot length.
    let et0 = p.var("et0");
    let et1 = p.var("et1");
    p.exp_cone(lv(tau0), LinExpr::constant(1.0), lv(et0), "t0_epi");
    p.exp_cone(lv(tau1), LinExpr::constant(1.0), lv(et1), "t1_epi");
    p.nonneg(LinExpr::constant(ctx.delta) - lv(et0) - lv(et1), "slot_length");

    // Edge CPU budget: Σ e^{z_k} ≤ f_edge_max.
    let mut ez_sum = LinExpr::zero();
    for (k, zk) in z.iter().enumerate() {
        let ez = p.var(format!("ez[{k}]"));
        p.exp_cone(lv(*zk), LinExpr::constant(1.0), lv(ez), format!("fu_epi[k={k}]"));
        ez_sum = ez_sum + lv(ez);
    }
    p.nonneg(LinExpr::constant(ctx.f_edge_max_g) - ez_sum, "edge_budget");

    // Per-UAV transmit power and AP covariance budgets.
    for (k, wk) in w.iter().enumerate() {
        p.soc(
            LinExpr::constant((ctx.p_u_max * (1.0 - POWER_MARGIN)).sqrt()),
            wk.flatten(),
            format!("beam_power[k={k}]"),
        );
    }
    p.nonneg(LinExpr::constant(ctx.p_ap_max) - r0.trace(), "ap_power0");
    p.nonneg(LinExpr::constant(ctx.p_ap_max) - r1.trace(), "ap_power1");

    // Energy epigraphs.
    p.nonneg(kappa(lv(p0), it.p0) - r0.trace(), "p0_cover");
    p.nonneg(kappa(lv(p1), it.p1) - r1.trace(), "p1_cover");
    {
        let mut stack = Vec::new();
        for wk in &w {
            stack.extend(wk.flatten());
        }
        let a = kappa(lv(p2), it.p2).scale(0.5);
        p.rsoc(a, LinExpr::constant(1.0), stack, "p2_cover");
    }
    let q1v = p.var("q1");
    let q2v = p.var("q2");
    let q3v = p.var("q3");
    p.exp_cone(lv(tau1) + lv(p2), LinExpr::constant(1.0), lv(q1v), "e_tx");
    p.exp_cone(lv(tau0) + lv(p0), LinExpr::constant(1.0), lv(q2v), "e_sense0");
    p.exp_cone(lv(tau1) + lv(p1), LinExpr::constant(1.0), lv(q3v), "e_sense1");
    let mut objective = lv(q1v) + lv(q2v) + lv(q3v);
    for k in 0..ctx.nk {
        let sv = p.var(format!("s[{k}]"));
        p.cubic_epigraph(lv(sv), lv(f_l[k]), format!("local_cubic[k={k}]"));
        let uv = p.var(format!("u[{k}]"));
        p.exp_cone(
            lv(tau0) + LinExpr::term(z[k], 3.0),
            LinExpr::constant(1.0),
            lv(uv),
            format!("edge_cubic[k={k}]"),
        );
        objective = objective + LinExpr::term(sv, ctx.e_local) + LinExpr::term(uv, ctx.e_edge);
    }

    if restoration {
        let mut obj = LinExpr::zero();
        for (_, v) in &slacks {
            obj = obj + lv(*v);
        }
        p.set_objective(obj);
    } else {
        p.set_objective(objective);
    }

    (
        p,
        Handles { tau0, tau1, z, f_l, a0, a1, b, zeta, gamma, r, p0, p1, p2, w, r0, r1, slacks },
    )
}

fn extract_iterate(sol: &crate::conic::ConicSolution, h: &Handles) -> Iterate {
    Iterate {
        tau0: sol.value_var(h.tau0),
        tau1: sol.value_var(h.tau1),
        z: h.z.iter().map(|&v| sol.value_var(v)).collect(),
        a0: sol.value_var(h.a0),
        a1: sol.value_var(h.a1),
        b: sol.value_var(h.b),
        zeta: h.zeta.iter().map(|&v| sol.value_var(v)).collect(),
        gamma: h.gamma.iter().map(|&v| sol.value_var(v)).collect(),
        r: h.r.iter().map(|&v| sol.value_var(v)).collect(),
        p0: sol.value_var(h.p0),
        p1: sol.value_var(h.p1),
        p2: sol.value_var(h.p2),
        w: h.w.iter().map(|w| sol.value_cx_vec(w)).collect(),
    }
}

fn extract_alloc(ctx: &SlotContext, sol: &crate::conic::ConicSolution, h: &Handles) -> SlotAllocation {
    SlotAllocation {
        beams: h.w.iter().map(|w| sol.value_cx_vec(w)).collect(),
        cov_compute: sol.value_herm(&h.r0),
        cov_offload: sol.value_herm(&h.r1),
        f_local: h
            .f_l
            .iter()
            .map(|&v| sol.value_var(v).clamp(0.0, ctx.f_local_cap_g) * 1e9)
            .collect(),
        f_edge: h.z.iter().map(|&v| sol.value_var(v).exp() * 1e9).collect(),
        t_compute: sol.value_var(h.tau0).exp(),
        t_offload: sol.value_var(h.tau1).exp(),
    }
}

/// Exact (non-propulsion) energy of one slot allocation, in joules.
pub fn slot_energy(alloc: &SlotAllocation, cfg: &ScenarioConfig) -> f64 {
    let (e_tx, e_sense) = metrics::transmit_sensing_energies(alloc);
    let mut e = e_tx + e_sense;
    for k in 0..alloc.f_local.len() {
        let (e_l, e_u) = metrics::compute_energies(k, alloc, cfg);
        e += e_l + e_u;
    }
    e
}

/// Repairs an infeasible linearization point by minimizing slacks on the
/// coupling constraints, relinearizing up to [`RESTORATION_ROUNDS`] times.
fn restore(ctx: &SlotContext, opts: &SolveOptions, mut it: Iterate) -> Result<Iterate, RaError> {
    let mut worst = ("unknown".to_string(), f64::INFINITY);
    for _ in 0..RESTORATION_ROUNDS {
        let (prob, h) = build_p12(ctx, &it, opts, true);
        let sol = prob.solve().map_err(|e| RaError::Backend { slot: ctx.slot, source: e })?;
        if !sol.status.is_acceptable() {
            return Err(RaError::BadStatus { slot: ctx.slot, status: sol.status });
        }
        let mut max_name = "none".to_string();
        let mut max_slack = 0.0;
        for (name, v) in &h.slacks {
            let s = sol.value_var(*v);
            if s > max_slack {
                max_slack = s;
                max_name = name.clone();
            }
        }
        it = extract_iterate(&sol, &h);
        if max_slack <= SLACK_TOL {
            return Ok(it);
        }
        worst = (max_name, max_slack);
    }
    Err(RaError::Infeasible { slot: ctx.slot, family: worst.0, slack: worst.1 })
}

/// Solves the resource allocation of one slot.
pub fn solve_slot(
    cfg: &ScenarioConfig,
    channels: &ChannelSet,
    slot: usize,
    opts: &SolveOptions,
    warm: Option<&SlotAllocation>,
) -> Result<SlotSolveResult, RaError> {
    let ctx = SlotContext::new(cfg, channels, slot, opts);
    // Structural bound: even the whole AP budget focused on the most
    // favorable sample cannot exceed λmax(S_q)·P_AP, so a sensing floor
    // above min_q of that is unreachable by any allocation.
    let sensing_cap = ctx
        .s_q
        .iter()
        .map(|s| principal_eigenvector(s).0)
        .fold(f64::INFINITY, f64::min)
        * ctx.p_ap_max;
    if ctx.gamma_min > sensing_cap {
        return Err(RaError::Infeasible {
            slot,
            family: "sensing".into(),
            slack: ctx.gamma_min - sensing_cap,
        });
    }
    let mut iterate = match warm {
        Some(a) => Iterate::from_alloc(&ctx, a),
        None => initial_point(&ctx, opts),
    };
    let mut restorations = 0usize;
    let mut trace: Vec<f64> = Vec::new();
    let mut best: Option<SlotAllocation> = None;

    let mut i = 0;
    while i < opts.max_iters {
        let (prob, h) = build_p12(&ctx, &iterate, opts, false);
        let sol = prob.solve().map_err(|e| RaError::Backend { slot, source: e })?;
        match sol.status {
            ConicStatus::Optimal | ConicStatus::AlmostOptimal => {}
            ConicStatus::Infeasible | ConicStatus::Failed(_) => {
                if !trace.is_empty() {
                    // A previously accepted point exists; stop refining.
                    break;
                }
                if restorations >= 2 {
                    return Err(RaError::Infeasible {
                        slot,
                        family: "restoration did not converge".into(),
                        slack: f64::NAN,
                    });
                }
                iterate = restore(&ctx, opts, iterate)?;
                restorations += 1;
                continue;
            }
            other => return Err(RaError::BadStatus { slot, status: other }),
        }
        let obj = sol.objective;
        if let Some(&prev) = trace.last() {
            if obj > prev + MONOTONE_SLACK * prev.abs().max(1.0) {
                // Numerical stall: keep the previous (better) point.
                break;
            }
        }
        let converged = trace.last().is_some_and(|&prev| prev - obj <= opts.rel_tol * obj.abs().max(1.0));
        trace.push(obj);
        best = Some(extract_alloc(&ctx, &sol, &h));
        iterate = extract_iterate(&sol, &h);
        i += 1;
        if converged {
            break;
        }
    }

    let alloc = best.ok_or(RaError::Infeasible {
        slot,
        family: "subproblem never solved".into(),
        slack: f64::NAN,
    })?;
    let energy = slot_energy(&alloc, cfg);
    Ok(SlotSolveResult {
        alloc,
        iterations: trace.len(),
        objective_trace: trace,
        energy,
        used_restoration: restorations > 0,
    })
}

/// Solves every slot of the horizon (independently, in parallel) and
/// assembles the full-horizon allocation.
pub fn solve_all_slots(
    cfg: &ScenarioConfig,
    channels: &ChannelSet,
    opts: &SolveOptions,
    warm: Option<&ResourceAllocation>,
) -> Result<(ResourceAllocation, Vec<SlotSolveResult>), RaError> {
    let results: Result<Vec<SlotSolveResult>, RaError> = (0..cfg.n_slots)
        .into_par_iter()
        .map(|n| solve_slot(cfg, channels, n, opts, warm.map(|w| &w.slots[n])))
        .collect();
    let results = results?;
    let alloc = ResourceAllocation { slots: results.iter().map(|r| r.alloc.clone()).collect() };
    Ok((alloc, results))
}

/// Matched (maximum-ratio) unit beam directions and the isotropic
/// unit-trace covariance profile, for the power-control benchmark.
pub fn power_only_policy(cfg: &ScenarioConfig, channels: &ChannelSet, slot: usize) -> BeamPolicy {
    let noise = metrics::receiver_noise(cfg);
    let beam_dirs = (0..cfg.k())
        .map(|k| {
            let h = &channels.offload[slot][k];
            let m = (h.adjoint() * h).scale(1.0 / noise);
            principal_eigenvector(&m).1
        })
        .collect();
    let dim = cfg.m() * cfg.n_t;
    let cov_profile = DMatrix::identity(dim, dim).scale(1.0 / dim as f64);
    BeamPolicy::PowerOnly { beam_dirs, cov_profile }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{sample_sensing_area, SensingBox, Trajectory};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Single-slot hover scenario small enough to solve in milliseconds.
    fn hover_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::reference_default();
        cfg.ap_positions = vec![[-20.0, 0.0], [20.0, 0.0]];
        cfg.warden_positions = vec![[0.0, 40.0, 90.0]];
        cfg.uav_altitudes = vec![100.0];
        cfg.uav_start = vec![[-40.0, 20.0]];
        cfg.uav_end = vec![[-40.0, 20.0]];
        cfg.sensing_box = SensingBox { min: [-10.0, -10.0, 10.0], max: [10.0, 10.0, 20.0] };
        cfg.q_samples = 4;
        cfg.n_slots = 1;
        cfg.duration = 1.0;
        cfg.n_t = 4;
        cfg.n_r = 2;
        cfg.n_u = 2;
        cfg.task_bits = vec![7e6];
        cfg.cycles_per_bit = vec![1e3];
        cfg.validate().unwrap();
        cfg
    }

    fn hover_setup(cfg: &ScenarioConfig) -> (Trajectory, Vec<[f64; 3]>, ChannelSet) {
        let traj = Trajectory::straight(cfg);
        let samples = sample_sensing_area(&cfg.sensing_box, cfg.q_samples).unwrap();
        let ch = ChannelSet::build(cfg, &traj, &samples).unwrap();
        (traj, samples, ch)
    }

    fn assert_feasible(
        cfg: &ScenarioConfig,
        traj: &Trajectory,
        samples: &[[f64; 3]],
        ch: &ChannelSet,
        alloc: &ResourceAllocation,
    ) {
        let report = metrics::check_p0(alloc, traj, ch, samples, cfg).unwrap();
        let worst = report.worst().cloned();
        assert!(
            report.is_feasible(),
            "allocation violates {:?}",
            worst.map(|e| (e.name, e.residual))
        );
    }

    #[test]
    fn kappa_is_global_under_estimator() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..2000 {
            let x = rng.random_range(-20.0..20.0);
            let xt = rng.random_range(-20.0..20.0);
            assert!(kappa_value(x, xt) <= x.exp() + 1e-12, "x={x} xt={xt}");
        }
        for xt in [-3.0, 0.0, 2.5] {
            assert_relative_eq!(kappa_value(xt, xt), xt.exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn kappa_expression_matches_value() {
        let mut p = Problem::new();
        let x = p.var("x");
        let e = kappa(LinExpr::var(x), 1.3);
        // κ(2.0; 1.3) evaluated through the expression.
        let manual = e.terms[0].1 * 2.0 + e.constant;
        assert_relative_eq!(manual, kappa_value(2.0, 1.3), max_relative = 1e-12);
    }

    #[test]
    fn hover_slot_solves_and_is_feasible() {
        let cfg = hover_cfg();
        let (traj, samples, ch) = hover_setup(&cfg);
        let res = solve_slot(&cfg, &ch, 0, &SolveOptions::default(), None).unwrap();
        // Monotone objective trace.
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + MONOTONE_SLACK * w[0].abs().max(1.0), "trace {:?}", res.objective_trace);
        }
        assert!(res.iterations >= 1);
        let alloc = ResourceAllocation { slots: vec![res.alloc.clone()] };
        assert_feasible(&cfg, &traj, &samples, &ch, &alloc);
        // Subproblem objective upper-bounds the recovered true energy.
        assert!(res.energy <= res.objective_trace.last().unwrap() + 1e-6);
    }

    #[test]
    fn power_only_is_never_better_than_full() {
        let cfg = hover_cfg();
        let (traj, samples, ch) = hover_setup(&cfg);
        let full = solve_slot(&cfg, &ch, 0, &SolveOptions::default(), None).unwrap();
        let opts = SolveOptions { policy: power_only_policy(&cfg, &ch, 0), ..Default::default() };
        let po = solve_slot(&cfg, &ch, 0, &opts, None).unwrap();
        let alloc = ResourceAllocation { slots: vec![po.alloc.clone()] };
        assert_feasible(&cfg, &traj, &samples, &ch, &alloc);
        assert!(po.energy >= full.energy - 1e-3 * full.energy.abs());
    }

    #[test]
    fn phase_ratio_is_enforced() {
        let cfg = hover_cfg();
        let (_, _, ch) = hover_setup(&cfg);
        let opts = SolveOptions { phase_ratio: Some(4.0), ..Default::default() };
        let res = solve_slot(&cfg, &ch, 0, &opts, None).unwrap();
        assert_relative_eq!(
            res.alloc.t_compute / res.alloc.t_offload,
            4.0,
            max_relative = 1e-6
        );
    }

    #[test]
    fn forced_offloading_zeroes_local_cpu() {
        let cfg = hover_cfg();
        let (traj, samples, ch) = hover_setup(&cfg);
        let opts = SolveOptions { f_local_cap: Some(0.0), ..Default::default() };
        let res = solve_slot(&cfg, &ch, 0, &opts, None).unwrap();
        assert!(res.alloc.f_local[0].abs() < 1e-3);
        let alloc = ResourceAllocation { slots: vec![res.alloc.clone()] };
        assert_feasible(&cfg, &traj, &samples, &ch, &alloc);
        // All the work now flows through the edge server.
        let l_u = metrics::edge_bits(0, &res.alloc, &cfg);
        assert!(l_u >= cfg.task_bits(0, 0) * (1.0 - 2e-6));
    }

    #[test]
    fn warm_start_matches_cold_quality() {
        let cfg = hover_cfg();
        let (_, _, ch) = hover_setup(&cfg);
        let cold = solve_slot(&cfg, &ch, 0, &SolveOptions::default(), None).unwrap();
        let warm = solve_slot(&cfg, &ch, 0, &SolveOptions::default(), Some(&cold.alloc)).unwrap();
        assert!(warm.energy <= cold.energy * (1.0 + 1e-3) + 1e-9);
        assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn impossible_sensing_target_reports_infeasible() {
        let mut cfg = hover_cfg();
        cfg.gamma_min = 1e9;
        let (_, _, ch) = hover_setup(&cfg);
        match solve_slot(&cfg, &ch, 0, &SolveOptions::default(), None) {
            Err(RaError::Infeasible { family, .. }) => {
                assert_eq!(family, "sensing");
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn two_uav_slot_is_feasible() {
        let mut cfg = hover_cfg();
        cfg.uav_altitudes = vec![100.0, 100.0];
        cfg.uav_start = vec![[-40.0, 20.0], [40.0, -30.0]];
        cfg.uav_end = cfg.uav_start.clone();
        cfg.task_bits = vec![7e6, 7e6];
        cfg.cycles_per_bit = vec![1e3, 1e3];
        cfg.validate().unwrap();
        let (traj, samples, ch) = hover_setup(&cfg);
        let res = solve_slot(&cfg, &ch, 0, &SolveOptions::default(), None).unwrap();
        let alloc = ResourceAllocation { slots: vec![res.alloc.clone()] };
        assert_feasible(&cfg, &traj, &samples, &ch, &alloc);
    }

    #[test]
    fn full_horizon_assembles_in_slot_order() {
        let mut cfg = hover_cfg();
        cfg.n_slots = 2;
        cfg.duration = 2.0;
        cfg.validate().unwrap();
        let (traj, samples, ch) = hover_setup(&cfg);
        let (alloc, results) = solve_all_slots(&cfg, &ch, &SolveOptions::default(), None).unwrap();
        assert_eq!(alloc.slots.len(), 2);
        assert_eq!(results.len(), 2);
        assert_feasible(&cfg, &traj, &samples, &ch, &alloc);
    }
}
