//! Simulation and optimization library for covert-aware UAV edge offloading
//! in a networked sensing system.
//!
//! A set of ground access points simultaneously (i) receives computation
//! tasks offloaded by rotary-wing UAVs, (ii) illuminates a sensing area and
//! collects target echoes, and (iii) radiates jamming that hides the UAV
//! uplinks from passive wardens. Each service slot splits into an
//! offloading phase and an edge-computing phase. The library models the
//! geometry and line-of-sight channels, the detection statistics at the
//! wardens, and the per-slot energy bookkeeping, and it minimizes total
//! energy (transmit + sensing + compute + propulsion) by alternating
//! between a per-slot conic resource-allocation step and a trust-region
//! trajectory step.
//!
//! Module map:
//! - [`scenario`]: geometry, time discretization, propulsion, validation
//! - [`channel`]: steering vectors, channel families, position derivatives
//! - [`covert`]: warden detection statistics and error probabilities
//! - [`metrics`]: rates, radar SINR, energy bookkeeping, residual checks
//! - [`conic`]: cone-program builder and interior-point backend
//! - [`ra_solver`]: per-slot resource allocation via successive convexification
//! - [`traj_solver`]: trajectory refinement via trust region
//! - [`ao_driver`]: alternating optimizer, benchmark designs, sweeps

pub mod ao_driver;
pub mod channel;
pub mod conic;
pub mod covert;
pub mod metrics;
pub mod ra_solver;
pub mod scenario;
pub mod traj_solver;
