//! Scenario geometry, time discretization, kinematics, and propulsion.
//!
//! Everything downstream (channels, metrics, solvers) reads from
//! [`ScenarioConfig`]; it owns node placement, antenna geometry, budgets,
//! task parameters, and the rotary-wing propulsion model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute slack (m) applied to distance/speed feasibility checks so that
/// binding constraints do not flag spurious violations.
pub const DISTANCE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("speed must be nonnegative, got {0}")]
    NegativeSpeed(f64),
    #[error("sensing box is degenerate: axis {axis} spans {len} m")]
    DegenerateBox { axis: usize, len: f64 },
    #[error("sample count must be at least 1")]
    EmptySampleCount,
    #[error("trajectory shape mismatch: expected {expected} waypoints per UAV, got {got}")]
    WaypointShape { expected: usize, got: usize },
    #[error("trajectory covers {got} UAVs, scenario has {expected}")]
    UavCount { expected: usize, got: usize },
    #[error("configuration invalid: {0}")]
    InvalidConfig(String),
}

/// Rotary-wing propulsion model parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PropulsionParams {
    /// Blade profile power in hover (W).
    pub p0: f64,
    /// Induced power in hover (W).
    pub p_h: f64,
    /// Rotor blade tip speed (m/s).
    pub u_tip: f64,
    /// Fuselage drag ratio.
    pub d0: f64,
    /// Air density (kg/m³).
    pub rho0: f64,
    /// Rotor solidity.
    pub s: f64,
    /// Rotor disc area (m²).
    pub a: f64,
    /// Mean rotor induced velocity in hover (m/s).
    pub v0: f64,
}

/// Axis-aligned sensing volume (m).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SensingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SensingBox {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - DISTANCE_TOL && p[i] <= self.max[i] + DISTANCE_TOL)
    }
}

/// Full static description of one service episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// AP positions (m); APs sit on the ground plane z = 0.
    pub ap_positions: Vec<[f64; 2]>,
    /// Warden positions (m), including altitude.
    pub warden_positions: Vec<[f64; 3]>,
    /// Fixed flight altitude per UAV (m).
    pub uav_altitudes: Vec<f64>,
    /// Initial horizontal UAV positions (m).
    pub uav_start: Vec<[f64; 2]>,
    /// Final horizontal UAV positions (m).
    pub uav_end: Vec<[f64; 2]>,
    /// Sensing volume the APs must keep illuminated.
    pub sensing_box: SensingBox,
    /// Number of deterministic target samples drawn from the box.
    pub q_samples: usize,
    /// Number of time slots.
    pub n_slots: usize,
    /// Total service duration (s).
    pub duration: f64,
    /// Transmit antennas per AP.
    pub n_t: usize,
    /// Receive antennas per AP.
    pub n_r: usize,
    /// Antennas per UAV.
    pub n_u: usize,
    /// Antenna spacing over wavelength (d/λ).
    pub spacing: f64,
    /// Path loss at the 1 m reference distance.
    pub c0: f64,
    /// Noise power per AP receive antenna (W).
    pub noise_rx: f64,
    /// Noise power at each warden (W).
    pub noise_warden: f64,
    /// Offloading bandwidth (Hz).
    pub bandwidth: f64,
    /// UAV transmit power budget (W).
    pub p_uav_max: f64,
    /// Aggregate AP transmit power budget (W).
    pub p_ap_max: f64,
    /// Maximum UAV-local CPU frequency (cycles/s).
    pub f_local_max: f64,
    /// Maximum aggregate edge CPU frequency (cycles/s).
    pub f_edge_max: f64,
    /// Effective capacitance coefficient of UAV CPUs.
    pub v_local: f64,
    /// Effective capacitance coefficient of the edge server.
    pub v_edge: f64,
    /// Task size per UAV and slot (bits).
    pub task_bits: Vec<f64>,
    /// CPU cycles per bit, per UAV.
    pub cycles_per_bit: Vec<f64>,
    /// Radar SINR floor.
    pub gamma_min: f64,
    /// Warden detection-statistic ratio cap (covertness threshold).
    pub mu_max: f64,
    /// Maximum UAV speed (m/s).
    pub v_max: f64,
    /// Minimum separation between flying objects (m).
    pub d_min: f64,
    /// Rotary-wing propulsion model.
    pub propulsion: PropulsionParams,
}

impl ScenarioConfig {
    /// Number of APs.
    pub fn m(&self) -> usize {
        self.ap_positions.len()
    }
    /// Number of UAVs.
    pub fn k(&self) -> usize {
        self.uav_altitudes.len()
    }
    /// Number of wardens.
    pub fn l(&self) -> usize {
        self.warden_positions.len()
    }
    /// Slot duration Δ (s).
    pub fn slot_duration(&self) -> f64 {
        self.duration / self.n_slots as f64
    }
    /// 3-D AP position (m).
    pub fn ap_position(&self, m: usize) -> [f64; 3] {
        let p = self.ap_positions[m];
        [p[0], p[1], 0.0]
    }
    /// Task size of UAV `k` in slot `_n` (bits). Constant over slots.
    pub fn task_bits(&self, k: usize, _n: usize) -> f64 {
        self.task_bits[k]
    }

    /// Reference parameter set used throughout the evaluation section
    /// (antenna counts, budgets, CPU/task model, propulsion constants),
    /// combined with a documented full-scale geometry: the sensing box is
    /// centered at the origin, three APs surround it at 60 m radius, two
    /// UAVs cross the area at 100 m altitude, and two wardens hover at
    /// 105 m north and south of the UAV corridors.
    pub fn reference_default() -> Self {
        ScenarioConfig {
            ap_positions: vec![[60.0, 0.0], [-30.0, 52.0], [-30.0, -52.0]],
            warden_positions: vec![[0.0, 130.0, 105.0], [0.0, -130.0, 105.0]],
            uav_altitudes: vec![100.0, 100.0],
            uav_start: vec![[-120.0, 80.0], [-120.0, -80.0]],
            uav_end: vec![[120.0, 80.0], [120.0, -80.0]],
            sensing_box: SensingBox {
                min: [-10.0, -10.0, 10.0],
                max: [10.0, 10.0, 20.0],
            },
            q_samples: 18,
            n_slots: 30,
            duration: 30.0,
            n_t: 16,
            n_r: 2,
            n_u: 2,
            spacing: 0.5,
            c0: 1e-3,
            noise_rx: 1e-10,
            noise_warden: 1e-10,
            bandwidth: 30e6,
            p_uav_max: 0.01,
            p_ap_max: 30.0,
            f_local_max: 5e9,
            f_edge_max: 50e9,
            v_local: 1e-26,
            v_edge: 1e-28,
            task_bits: vec![7e6, 7e6],
            cycles_per_bit: vec![1e3, 1e3],
            gamma_min: 0.1,
            mu_max: 0.0276,
            v_max: 20.0,
            d_min: 20.0,
            propulsion: PropulsionParams {
                p0: 79.86,
                p_h: 88.63,
                u_tip: 120.0,
                d0: 0.6,
                rho0: 1.225,
                s: 0.05,
                a: 0.503,
                v0: 4.03,
            },
        }
    }

    /// Structural validation: counts agree, budgets/durations positive.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let k = self.k();
        let err = |msg: String| Err(ScenarioError::InvalidConfig(msg));
        if self.m() == 0 || k == 0 {
            return err("need at least one AP and one UAV".into());
        }
        if self.uav_start.len() != k || self.uav_end.len() != k {
            return err(format!(
                "uav_start/uav_end must list {k} entries, got {}/{}",
                self.uav_start.len(),
                self.uav_end.len()
            ));
        }
        if self.task_bits.len() != k || self.cycles_per_bit.len() != k {
            return err(format!(
                "task_bits/cycles_per_bit must list {k} entries, got {}/{}",
                self.task_bits.len(),
                self.cycles_per_bit.len()
            ));
        }
        if self.n_slots == 0 {
            return err("n_slots must be at least 1".into());
        }
        if self.q_samples == 0 {
            return Err(ScenarioError::EmptySampleCount);
        }
        for (axis, (lo, hi)) in self.sensing_box.min.iter().zip(self.sensing_box.max).enumerate() {
            if !(hi - lo).is_finite() || hi - lo <= 0.0 {
                return Err(ScenarioError::DegenerateBox { axis, len: hi - lo });
            }
        }
        if self.n_t == 0 || self.n_r == 0 || self.n_u == 0 {
            return err("antenna counts must be positive".into());
        }
        for (name, v) in [
            ("duration", self.duration),
            ("c0", self.c0),
            ("noise_rx", self.noise_rx),
            ("noise_warden", self.noise_warden),
            ("bandwidth", self.bandwidth),
            ("p_uav_max", self.p_uav_max),
            ("p_ap_max", self.p_ap_max),
            ("f_local_max", self.f_local_max),
            ("f_edge_max", self.f_edge_max),
            ("v_max", self.v_max),
            ("spacing", self.spacing),
            ("mu_max", self.mu_max),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.gamma_min < 0.0 || self.d_min < 0.0 {
            return err("gamma_min and d_min must be nonnegative".into());
        }
        for k in 0..self.k() {
            let dist = hypot2(sub2(self.uav_end[k], self.uav_start[k]));
            if dist > self.v_max * self.duration + DISTANCE_TOL {
                return err(format!(
                    "UAV {k} cannot reach its final position: needs {dist:.3} m in {} s at {} m/s",
                    self.duration, self.v_max
                ));
            }
        }
        Ok(())
    }
}

/// Horizontal waypoint lists, one per UAV, each of length `n_slots + 1`.
/// Waypoint 0 is the initial position; the UAV occupies waypoint `n + 1`
/// during slot `n` (0-based slots).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Vec<[f64; 2]>>,
}

impl Trajectory {
    /// Uniform straight-line flight from each UAV's start to its end.
    pub fn straight(cfg: &ScenarioConfig) -> Trajectory {
        let n = cfg.n_slots;
        let waypoints = (0..cfg.k())
            .map(|k| {
                (0..=n)
                    .map(|i| {
                        let t = i as f64 / n as f64;
                        let a = cfg.uav_start[k];
                        let b = cfg.uav_end[k];
                        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
                    })
                    .collect()
            })
            .collect();
        Trajectory { waypoints }
    }

    /// Horizontal position occupied during slot `n` (0-based).
    pub fn position(&self, k: usize, n: usize) -> [f64; 2] {
        self.waypoints[k][n + 1]
    }

    /// 3-D position during slot `n` at the UAV's fixed altitude.
    pub fn position3(&self, cfg: &ScenarioConfig, k: usize, n: usize) -> [f64; 3] {
        let p = self.position(k, n);
        [p[0], p[1], cfg.uav_altitudes[k]]
    }
}

/// Propulsion power (W) of a rotary-wing UAV at horizontal speed `v` (m/s):
/// blade profile term, parasite term, and induced term.
pub fn propulsion_power(v: f64, p: &PropulsionParams) -> Result<f64, ScenarioError> {
    if v < 0.0 {
        return Err(ScenarioError::NegativeSpeed(v));
    }
    let profile = p.p0 * (1.0 + 3.0 * v * v / (p.u_tip * p.u_tip));
    let parasite = 0.5 * p.d0 * p.rho0 * p.s * p.a * v * v * v;
    let quartic = 1.0 + v.powi(4) / (4.0 * p.v0.powi(4));
    let induced = p.p_h * (quartic.sqrt() - v * v / (2.0 * p.v0 * p.v0)).sqrt();
    Ok(profile + parasite + induced)
}

/// Per-slot speeds ‖u[n+1] − u[n]‖ / Δ for n = 0..N−1, per UAV.
pub fn velocity_from_waypoints(
    traj: &Trajectory,
    cfg: &ScenarioConfig,
) -> Result<Vec<Vec<f64>>, ScenarioError> {
    check_shape(traj, cfg)?;
    let dt = cfg.slot_duration();
    Ok(traj
        .waypoints
        .iter()
        .map(|w| w.windows(2).map(|p| hypot2(sub2(p[1], p[0])) / dt).collect())
        .collect())
}

/// Deterministic grid of `q` target positions covering `bx`.
///
/// The per-axis point counts are the ordered factorization of `q` whose
/// normalized shape is closest to the box's aspect ratio (ties broken
/// toward putting more points on longer axes); each axis is then sampled
/// at cell centers, so every point is strictly inside the box.
pub fn sample_sensing_area(bx: &SensingBox, q: usize) -> Result<Vec<[f64; 3]>, ScenarioError> {
    if q == 0 {
        return Err(ScenarioError::EmptySampleCount);
    }
    let len: Vec<f64> = (0..3).map(|i| bx.max[i] - bx.min[i]).collect();
    for (axis, &l) in len.iter().enumerate() {
        if !(l > 0.0) || !l.is_finite() {
            return Err(ScenarioError::DegenerateBox { axis, len: l });
        }
    }
    let geo_box = (len[0] * len[1] * len[2]).powf(1.0 / 3.0);
    let geo_q = (q as f64).powf(1.0 / 3.0);
    let mut best: Option<([usize; 3], f64, f64)> = None;
    for a in 1..=q {
        if q % a != 0 {
            continue;
        }
        for b in 1..=q / a {
            if (q / a) % b != 0 {
                continue;
            }
            let c = q / a / b;
            let counts = [a, b, c];
            let score: f64 = (0..3)
                .map(|i| (counts[i] as f64 / geo_q - len[i] / geo_box).powi(2))
                .sum();
            // Correlation with axis lengths; a larger value puts more
            // points on longer axes and arbitrates exact score ties.
            let corr: f64 = (0..3).map(|i| counts[i] as f64 * len[i]).sum();
            let better = match &best {
                None => true,
                Some((bc, bs, bcorr)) => {
                    score < bs - 1e-12
                        || (score < bs + 1e-12 && (corr > *bcorr + 1e-12 || (corr > *bcorr - 1e-12 && counts < *bc)))
                }
            };
            if better {
                best = Some((counts, score, corr));
            }
        }
    }
    let (counts, _, _) = best.expect("q >= 1 always has the trivial factorization");
    let mut pts = Vec::with_capacity(q);
    for ix in 0..counts[0] {
        for iy in 0..counts[1] {
            for iz in 0..counts[2] {
                let idx = [ix, iy, iz];
                let mut p = [0.0; 3];
                for ax in 0..3 {
                    p[ax] = bx.min[ax] + (idx[ax] as f64 + 0.5) * len[ax] / counts[ax] as f64;
                }
                pts.push(p);
            }
        }
    }
    Ok(pts)
}

/// One violated trajectory constraint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TrajectoryViolation {
    /// Segment into slot `slot` exceeds the speed cap by `margin` m/s.
    Speed { uav: usize, slot: usize, margin: f64 },
    /// Endpoint differs from the configured start/end by `margin` m.
    Endpoint { uav: usize, which_end: bool, margin: f64 },
    /// Two UAVs closer than the separation floor; margin is the shortfall (m).
    UavUav { uav_a: usize, uav_b: usize, slot: usize, margin: f64 },
    /// UAV–warden separation shortfall (m).
    UavWarden { uav: usize, warden: usize, slot: usize, margin: f64 },
    /// UAV–target-sample separation shortfall (m).
    UavTarget { uav: usize, sample: usize, slot: usize, margin: f64 },
}

/// Feasibility report for a trajectory: empty `violations` means feasible.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub violations: Vec<TrajectoryViolation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks speed caps, endpoint pinning, and all pairwise separation floors
/// (UAV–UAV, UAV–warden, UAV–target sample) for every slot.
pub fn validate_trajectory(
    traj: &Trajectory,
    cfg: &ScenarioConfig,
    target_samples: &[[f64; 3]],
) -> Result<FeasibilityReport, ScenarioError> {
    check_shape(traj, cfg)?;
    let mut violations = Vec::new();
    let dt = cfg.slot_duration();
    let speeds = velocity_from_waypoints(traj, cfg)?;
    for k in 0..cfg.k() {
        for (n, &v) in speeds[k].iter().enumerate() {
            if v > cfg.v_max + DISTANCE_TOL / dt {
                violations.push(TrajectoryViolation::Speed { uav: k, slot: n, margin: v - cfg.v_max });
            }
        }
        for (which_end, (have, want)) in [
            (false, (traj.waypoints[k][0], cfg.uav_start[k])),
            (true, (traj.waypoints[k][cfg.n_slots], cfg.uav_end[k])),
        ] {
            let err = hypot2(sub2(have, want));
            if err > DISTANCE_TOL {
                violations.push(TrajectoryViolation::Endpoint { uav: k, which_end, margin: err });
            }
        }
    }
    let floor = cfg.d_min - DISTANCE_TOL;
    for n in 0..cfg.n_slots {
        for ka in 0..cfg.k() {
            let pa = traj.position3(cfg, ka, n);
            for kb in ka + 1..cfg.k() {
                let d = dist3(pa, traj.position3(cfg, kb, n));
                if d < floor {
                    violations.push(TrajectoryViolation::UavUav {
                        uav_a: ka,
                        uav_b: kb,
                        slot: n,
                        margin: d - cfg.d_min,
                    });
                }
            }
            for (l, w) in cfg.warden_positions.iter().enumerate() {
                let d = dist3(pa, *w);
                if d < floor {
                    violations.push(TrajectoryViolation::UavWarden {
                        uav: ka,
                        warden: l,
                        slot: n,
                        margin: d - cfg.d_min,
                    });
                }
            }
            for (qi, qt) in target_samples.iter().enumerate() {
                let d = dist3(pa, *qt);
                if d < floor {
                    violations.push(TrajectoryViolation::UavTarget {
                        uav: ka,
                        sample: qi,
                        slot: n,
                        margin: d - cfg.d_min,
                    });
                }
            }
        }
    }
    Ok(FeasibilityReport { violations })
}

fn check_shape(traj: &Trajectory, cfg: &ScenarioConfig) -> Result<(), ScenarioError> {
    if traj.waypoints.len() != cfg.k() {
        return Err(ScenarioError::UavCount { expected: cfg.k(), got: traj.waypoints.len() });
    }
    for w in &traj.waypoints {
        if w.len() != cfg.n_slots + 1 {
            return Err(ScenarioError::WaypointShape { expected: cfg.n_slots + 1, got: w.len() });
        }
    }
    Ok(())
}

pub(crate) fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn hypot2(d: [f64; 2]) -> f64 {
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

pub(crate) fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}
