//! Per-slot performance metrics and the feasibility audit for the original
//! (pre-relinearization) problem: communication SINR, offloaded/local/edge
//! bits, expected radar SINR, the energy breakdown, and a normalized
//! residual report over every original constraint.

use nalgebra::{Complex, DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::covert;
use crate::scenario::{validate_trajectory, ScenarioConfig, Trajectory};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("allocation has {got} slots, scenario expects {want}")]
    SlotCount { got: usize, want: usize },
    #[error("slot {slot}: allocation field `{field}` has {got} entries, expected {want}")]
    FieldLength { slot: usize, field: &'static str, got: usize, want: usize },
    #[error("slot {slot}: beam {k} has {got} entries, expected {want}")]
    BeamLength { slot: usize, k: usize, got: usize, want: usize },
    #[error("slot {slot}: sensing covariance is {rows}x{cols}, expected {want}x{want}")]
    CovarianceShape { slot: usize, rows: usize, cols: usize, want: usize },
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
}

/// Decision variables for one slot.
#[derive(Debug, Clone)]
pub struct SlotAllocation {
    /// Offloading beamformers w_k, one length-N_U vector per UAV.
    pub beams: Vec<DVector<Complex64>>,
    /// Sensing covariance transmitted while UAVs are silent (computing phase).
    pub cov_compute: DMatrix<Complex64>,
    /// Sensing covariance transmitted while UAVs offload.
    pub cov_offload: DMatrix<Complex64>,
    /// Local CPU frequencies f_l (Hz), one per UAV.
    pub f_local: Vec<f64>,
    /// Edge CPU frequencies f_u (Hz) assigned to each UAV's task.
    pub f_edge: Vec<f64>,
    /// Computing-phase duration t0 (s).
    pub t_compute: f64,
    /// Offloading-phase duration t1 (s).
    pub t_offload: f64,
}

/// Full-horizon allocation: one [`SlotAllocation`] per slot.
#[derive(Debug, Clone)]
pub struct ResourceAllocation {
    pub slots: Vec<SlotAllocation>,
}

impl ResourceAllocation {
    /// Checks slot count and per-slot dimensions against the scenario.
    pub fn validate_shape(&self, cfg: &ScenarioConfig) -> Result<(), MetricsError> {
        if self.slots.len() != cfg.n_slots {
            return Err(MetricsError::SlotCount { got: self.slots.len(), want: cfg.n_slots });
        }
        let cov_dim = cfg.m() * cfg.n_t;
        for (n, slot) in self.slots.iter().enumerate() {
            for (field, len) in [
                ("beams", slot.beams.len()),
                ("f_local", slot.f_local.len()),
                ("f_edge", slot.f_edge.len()),
            ] {
                if len != cfg.k() {
                    return Err(MetricsError::FieldLength {
                        slot: n,
                        field,
                        got: len,
                        want: cfg.k(),
                    });
                }
            }
            for (k, w) in slot.beams.iter().enumerate() {
                if w.len() != cfg.n_u {
                    return Err(MetricsError::BeamLength {
                        slot: n,
                        k,
                        got: w.len(),
                        want: cfg.n_u,
                    });
                }
            }
            for cov in [&slot.cov_compute, &slot.cov_offload] {
                if cov.nrows() != cov_dim || cov.ncols() != cov_dim {
                    return Err(MetricsError::CovarianceShape {
                        slot: n,
                        rows: cov.nrows(),
                        cols: cov.ncols(),
                        want: cov_dim,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Real quadratic form g^H R g (R Hermitian).
pub(crate) fn quad_form(g: &DVector<Complex64>, r: &DMatrix<Complex64>) -> f64 {
    let rg = r * g;
    g.dotc(&rg).re
}

/// Real trace of G R G^H (R Hermitian).
pub(crate) fn trace_quad(g: &DMatrix<Complex64>, r: &DMatrix<Complex64>) -> f64 {
    // tr(G R G^H) = Σ_i row_i R row_i^H; via the product's diagonal.
    let gr = g * r;
    let mut t = 0.0;
    for i in 0..g.nrows() {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..g.ncols() {
            acc += gr[(i, j)] * g[(i, j)].conj();
        }
        t += acc.re;
    }
    t
}

/// Real trace of a (Hermitian) matrix.
pub(crate) fn trace_re(r: &DMatrix<Complex64>) -> f64 {
    let mut t = 0.0;
    for i in 0..r.nrows().min(r.ncols()) {
        t += r[(i, i)].re;
    }
    t
}

/// Receiver noise power aggregated over all AP receive antennas: M·N_R·σ_R².
pub fn receiver_noise(cfg: &ScenarioConfig) -> f64 {
    (cfg.m() * cfg.n_r) as f64 * cfg.noise_rx
}

/// Offloading SINR of UAV `k` with the sensing interference evaluated at
/// sample `q`: ||H_k w_k||² / (Σ_{i≠k}||H_i w_i||² + tr(G_q R_o G_q^H) + M·N_R·σ²).
pub fn comm_sinr(
    k: usize,
    slot: usize,
    alloc: &SlotAllocation,
    channels: &ChannelSet,
    q: usize,
    cfg: &ScenarioConfig,
) -> f64 {
    let mut num = 0.0;
    let mut interference = 0.0;
    for (i, w) in alloc.beams.iter().enumerate() {
        let p = (&channels.offload[slot][i] * w).norm_squared();
        if i == k {
            num = p;
        } else {
            interference += p;
        }
    }
    let sensing = trace_quad(&channels.sensing[q], &alloc.cov_offload);
    num / (interference + sensing + receiver_noise(cfg))
}

/// Bits offloaded by UAV `k` in this slot: t1·B·log2(1 + SINR) at sample `q`.
pub fn offloaded_bits(
    k: usize,
    slot: usize,
    alloc: &SlotAllocation,
    channels: &ChannelSet,
    q: usize,
    cfg: &ScenarioConfig,
) -> f64 {
    alloc.t_offload * cfg.bandwidth * (1.0 + comm_sinr(k, slot, alloc, channels, q, cfg)).log2()
}

/// Slot-averaged expected radar SINR at sample `q`:
/// (t0/Δ)·tr(G R_c G^H)/(MN_Rσ²) + (t1/Δ)·tr(G R_o G^H)/(Σ_i||H_i w_i||² + MN_Rσ²).
pub fn radar_sinr_expected(
    slot: usize,
    alloc: &SlotAllocation,
    channels: &ChannelSet,
    q: usize,
    cfg: &ScenarioConfig,
) -> f64 {
    let delta = cfg.slot_duration();
    let noise = receiver_noise(cfg);
    let g = &channels.sensing[q];
    let quiet = trace_quad(g, &alloc.cov_compute) / noise;
    let mut uplink = 0.0;
    for (i, w) in alloc.beams.iter().enumerate() {
        uplink += (&channels.offload[slot][i] * w).norm_squared();
    }
    let busy = trace_quad(g, &alloc.cov_offload) / (uplink + noise);
    (alloc.t_compute / delta) * quiet + (alloc.t_offload / delta) * busy
}

/// Bits computed locally on UAV `k` over the whole slot: f_l·Δ/D_k.
pub fn local_bits(k: usize, alloc: &SlotAllocation, cfg: &ScenarioConfig) -> f64 {
    alloc.f_local[k] * cfg.slot_duration() / cfg.cycles_per_bit[k]
}

/// Bits the edge server can process for UAV `k` during the computing phase:
/// f_u·t0/D_k.
pub fn edge_bits(k: usize, alloc: &SlotAllocation, cfg: &ScenarioConfig) -> f64 {
    alloc.f_edge[k] * alloc.t_compute / cfg.cycles_per_bit[k]
}

/// (local, edge) computation energies for UAV `k`:
/// E_l = v_l·f_l³·Δ, E_u = v_u·f_u³·t0.
pub fn compute_energies(k: usize, alloc: &SlotAllocation, cfg: &ScenarioConfig) -> (f64, f64) {
    let e_local = cfg.v_local * alloc.f_local[k].powi(3) * cfg.slot_duration();
    let e_edge = cfg.v_edge * alloc.f_edge[k].powi(3) * alloc.t_compute;
    (e_local, e_edge)
}

/// (offload-transmit, sensing) energies for one slot:
/// E_C = t1·Σ_k||w_k||², E_S = t0·tr(R_c) + t1·tr(R_o).
pub fn transmit_sensing_energies(alloc: &SlotAllocation) -> (f64, f64) {
    let tx: f64 = alloc.beams.iter().map(|w| w.norm_squared()).sum();
    let sense =
        alloc.t_compute * trace_re(&alloc.cov_compute) + alloc.t_offload * trace_re(&alloc.cov_offload);
    (alloc.t_offload * tx, sense)
}

/// Energy totals for one slot.
#[derive(Debug, Clone)]
pub struct SlotEnergy {
    pub offload_tx: f64,
    pub sensing: f64,
    pub local_cpu: Vec<f64>,
    pub edge_cpu: Vec<f64>,
    pub propulsion: Vec<f64>,
}

impl SlotEnergy {
    /// Slot total, summed as tx + sensing + Σ_k local + Σ_k edge + Σ_k propulsion.
    pub fn total(&self) -> f64 {
        self.offload_tx
            + self.sensing
            + self.local_cpu.iter().sum::<f64>()
            + self.edge_cpu.iter().sum::<f64>()
            + self.propulsion.iter().sum::<f64>()
    }
}

/// Full energy accounting. `total` is the sum of slot totals in slot order,
/// each slot summed as documented on [`SlotEnergy::total`]; the category
/// totals use the same per-category order, so every reported figure is
/// reproducible bit-for-bit.
#[derive(Debug, Clone)]
pub struct EnergyBreakdown {
    pub per_slot: Vec<SlotEnergy>,
    pub offload_tx: f64,
    pub sensing: f64,
    pub local_cpu: f64,
    pub edge_cpu: f64,
    pub propulsion: f64,
    pub total: f64,
}

/// Computes per-slot and total energies for an allocation and trajectory.
pub fn energy_breakdown(
    alloc: &ResourceAllocation,
    traj: &Trajectory,
    cfg: &ScenarioConfig,
) -> Result<EnergyBreakdown, MetricsError> {
    alloc.validate_shape(cfg)?;
    let delta = cfg.slot_duration();
    let mut per_slot = Vec::with_capacity(cfg.n_slots);
    for (n, slot) in alloc.slots.iter().enumerate() {
        let (offload_tx, sensing) = transmit_sensing_energies(slot);
        let mut local_cpu = Vec::with_capacity(cfg.k());
        let mut edge_cpu = Vec::with_capacity(cfg.k());
        let mut propulsion = Vec::with_capacity(cfg.k());
        for k in 0..cfg.k() {
            let (e_l, e_u) = compute_energies(k, slot, cfg);
            local_cpu.push(e_l);
            edge_cpu.push(e_u);
            let v = crate::scenario::sub2(traj.waypoints[k][n + 1], traj.waypoints[k][n]);
            let speed = crate::scenario::hypot2(v) / delta;
            propulsion.push(crate::scenario::propulsion_power(speed, &cfg.propulsion)? * delta);
        }
        per_slot.push(SlotEnergy { offload_tx, sensing, local_cpu, edge_cpu, propulsion });
    }
    let offload_tx = per_slot.iter().map(|s| s.offload_tx).sum();
    let sensing = per_slot.iter().map(|s| s.sensing).sum();
    let local_cpu = per_slot.iter().map(|s| s.local_cpu.iter().sum::<f64>()).sum();
    let edge_cpu = per_slot.iter().map(|s| s.edge_cpu.iter().sum::<f64>()).sum();
    let propulsion = per_slot.iter().map(|s| s.propulsion.iter().sum::<f64>()).sum();
    let total = per_slot.iter().map(|s| s.total()).sum();
    Ok(EnergyBreakdown { per_slot, offload_tx, sensing, local_cpu, edge_cpu, propulsion, total })
}

/// One audited constraint: `residual` ≤ 0 means satisfied; positive values
/// are normalized violation magnitudes (dimensionless).
#[derive(Debug, Clone)]
pub struct ResidualEntry {
    /// Constraint family plus indices, e.g. `com1[k=0,q=2]`.
    pub name: String,
    /// Slot the constraint belongs to; `None` for trajectory-only rows.
    pub slot: Option<usize>,
    pub residual: f64,
}

/// Residuals for every original constraint of a full allocation.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub entries: Vec<ResidualEntry>,
}

/// Default residual tolerance for declaring an allocation feasible.
pub const RESIDUAL_TOL: f64 = 1e-6;

impl ResidualReport {
    /// Largest residual (negative when everything holds with margin).
    pub fn max_residual(&self) -> f64 {
        self.entries.iter().map(|e| e.residual).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Entries exceeding `tol`.
    pub fn violations(&self, tol: f64) -> Vec<&ResidualEntry> {
        self.entries.iter().filter(|e| e.residual > tol).collect()
    }

    /// True when every residual is within [`RESIDUAL_TOL`].
    pub fn is_feasible(&self) -> bool {
        self.max_residual() <= RESIDUAL_TOL
    }

    /// The worst entry, if any.
    pub fn worst(&self) -> Option<&ResidualEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.residual.partial_cmp(&b.residual).unwrap_or(std::cmp::Ordering::Equal))
    }
}

/// Smallest eigenvalue of a Hermitian matrix.
fn min_eigenvalue(r: &DMatrix<Complex64>) -> f64 {
    if r.nrows() == 0 {
        return 0.0;
    }
    // Symmetrize first so floating-point asymmetry cannot poison the solve.
    let h = (r + r.adjoint()).scale(0.5);
    let eig = nalgebra::SymmetricEigen::new(h);
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Audits an allocation + trajectory against every original constraint:
/// sensing SINR at every sample, both communication constraints, the
/// per-warden covertness cap, all resource boxes and power budgets, PSD of
/// both sensing covariances, and the trajectory rules. Residuals are
/// normalized (divided by the constraint's own scale) and signed; positive
/// means violated.
pub fn check_p0(
    alloc: &ResourceAllocation,
    traj: &Trajectory,
    channels: &ChannelSet,
    samples: &[[f64; 3]],
    cfg: &ScenarioConfig,
) -> Result<ResidualReport, MetricsError> {
    alloc.validate_shape(cfg)?;
    let mut entries = Vec::new();
    let delta = cfg.slot_duration();
    let nq = channels.sensing.len();

    for (n, slot) in alloc.slots.iter().enumerate() {
        // Sensing SINR at every sample point.
        for q in 0..nq {
            let e = radar_sinr_expected(n, slot, channels, q, cfg);
            entries.push(ResidualEntry {
                name: format!("sensing[q={q}]"),
                slot: Some(n),
                residual: (cfg.gamma_min - e) / cfg.gamma_min,
            });
        }
        // Task-split constraints per UAV (offloading checked at every sample).
        for k in 0..cfg.k() {
            let bits = cfg.task_bits(k, n);
            let l_l = local_bits(k, slot, cfg);
            let l_u = edge_bits(k, slot, cfg);
            let remaining = bits - l_l;
            for q in 0..nq {
                let l_o = offloaded_bits(k, n, slot, channels, q, cfg);
                entries.push(ResidualEntry {
                    name: format!("com1[k={k},q={q}]"),
                    slot: Some(n),
                    residual: (remaining - l_o) / bits,
                });
            }
            entries.push(ResidualEntry {
                name: format!("com2[k={k}]"),
                slot: Some(n),
                residual: (remaining - l_u) / bits,
            });
        }
        // Covertness at every warden.
        for l in 0..cfg.l() {
            let stats = covert::lambda_pair(l, n, slot, channels, cfg.noise_warden);
            entries.push(ResidualEntry {
                name: format!("covert[l={l}]"),
                slot: Some(n),
                residual: (stats.mu() - cfg.mu_max) / cfg.mu_max,
            });
        }
        // Resource boxes and budgets.
        for k in 0..cfg.k() {
            entries.push(ResidualEntry {
                name: format!("f_local_max[k={k}]"),
                slot: Some(n),
                residual: (slot.f_local[k] - cfg.f_local_max) / cfg.f_local_max,
            });
            entries.push(ResidualEntry {
                name: format!("f_local_nonneg[k={k}]"),
                slot: Some(n),
                residual: -slot.f_local[k] / cfg.f_local_max,
            });
            entries.push(ResidualEntry {
                name: format!("f_edge_nonneg[k={k}]"),
                slot: Some(n),
                residual: -slot.f_edge[k] / cfg.f_edge_max,
            });
            entries.push(ResidualEntry {
                name: format!("beam_power[k={k}]"),
                slot: Some(n),
                residual: (slot.beams[k].norm_squared() - cfg.p_uav_max) / cfg.p_uav_max,
            });
        }
        entries.push(ResidualEntry {
            name: "f_edge_budget".into(),
            slot: Some(n),
            residual: (slot.f_edge.iter().sum::<f64>() - cfg.f_edge_max) / cfg.f_edge_max,
        });
        for (tag, cov) in [("compute", &slot.cov_compute), ("offload", &slot.cov_offload)] {
            entries.push(ResidualEntry {
                name: format!("ap_power[{tag}]"),
                slot: Some(n),
                residual: (trace_re(cov) - cfg.p_ap_max) / cfg.p_ap_max,
            });
            let tr = trace_re(cov);
            entries.push(ResidualEntry {
                name: format!("psd[{tag}]"),
                slot: Some(n),
                residual: (-min_eigenvalue(cov) - 1e-8 * tr) / tr.max(1e-30),
            });
        }
        entries.push(ResidualEntry {
            name: "phase_split".into(),
            slot: Some(n),
            residual: (slot.t_compute + slot.t_offload - delta) / delta,
        });
        entries.push(ResidualEntry {
            name: "t_compute_nonneg".into(),
            slot: Some(n),
            residual: -slot.t_compute / delta,
        });
        entries.push(ResidualEntry {
            name: "t_offload_nonneg".into(),
            slot: Some(n),
            residual: -slot.t_offload / delta,
        });
    }

    // Trajectory rules, normalized onto the same scale.
    let feas = validate_trajectory(traj, cfg, samples)?;
    for v in &feas.violations {
        use crate::scenario::TrajectoryViolation::*;
        let (name, residual) = match v {
            Speed { uav, slot, margin } => {
                (format!("speed[k={uav},n={slot}]"), margin / cfg.v_max)
            }
            Endpoint { uav, which_end, margin } => (
                format!("endpoint[k={uav},end={}]", if *which_end { 1 } else { 0 }),
                *margin,
            ),
            UavUav { uav_a, uav_b, slot, margin } => (
                format!("uav_uav[a={uav_a},b={uav_b},n={slot}]"),
                -margin / cfg.d_min,
            ),
            UavWarden { uav, warden, slot, margin } => (
                format!("uav_warden[k={uav},l={warden},n={slot}]"),
                -margin / cfg.d_min,
            ),
            UavTarget { uav, sample, slot, margin } => (
                format!("uav_target[k={uav},q={sample},n={slot}]"),
                -margin / cfg.d_min,
            ),
        };
        entries.push(ResidualEntry { name, slot: None, residual });
    }

    Ok(ResidualReport { entries })
}

/// Convenience constructor: an all-zero allocation with the phase split
/// t0 = t1 = Δ/2 (useful as an audit baseline).
pub fn zero_allocation(cfg: &ScenarioConfig) -> ResourceAllocation {
    let dim = cfg.m() * cfg.n_t;
    let slots = (0..cfg.n_slots)
        .map(|_| SlotAllocation {
            beams: vec![DVector::from_element(cfg.n_u, Complex::new(0.0, 0.0)); cfg.k()],
            cov_compute: DMatrix::zeros(dim, dim),
            cov_offload: DMatrix::zeros(dim, dim),
            f_local: vec![0.0; cfg.k()],
            f_edge: vec![0.0; cfg.k()],
            t_compute: cfg.slot_duration() / 2.0,
            t_offload: cfg.slot_duration() / 2.0,
        })
        .collect();
    ResourceAllocation { slots }
}
