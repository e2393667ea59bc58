//! Equilibrium model of hospital choice under congestion.
//!
//! Patients of several classes choose between opting out of care and a set of
//! facility levels. Each class `k` assigns alternative `i` the deterministic
//! utility `u[k][i] = ref_utility[k][i] - alpha[k] * w[i]`, where `w[i]` is the
//! expected waiting time at level `i`, and adds an i.i.d. Gumbel disturbance at
//! scale `beta[k]`, so choice probabilities are a softmax ([`choice`]). Waiting
//! times in turn are produced by congestion: each level serves its annual flow
//! through M/M/1 or M/M/s queues whose expected delay is strictly increasing in
//! the flow ([`queueing`]). An equilibrium is a joint assignment of choice
//! probabilities, flows, and waits that is mutually consistent.
//!
//! The equilibrium exists, is unique, and is computed as the minimizer of a
//! strictly convex potential
//!
//! ```text
//! Theta(w) = sum_i H_i(w_i) + sum_k (I_k / alpha_k) * Phi_k(u_k(w))
//! ```
//!
//! where `H_i` integrates the inverse delay function and `Phi_k` is the
//! expected maximum utility (log-sum-exp for Gumbel noise). Stationarity of
//! `Theta` is exactly the equilibrium condition "inflow equals the flow the
//! wait was generated by" ([`equilibrium`]).
//!
//! On top of the solver, the crate bundles a calibrated case study of a
//! three-tier urban hospital system ([`scenario`]) together with a set of
//! named policy interventions (upskilling physicians, upgrading equipment,
//! health promotion, waiting-time-sensitivity changes, and combinations), a
//! fixed-wait comparison model that ignores congestion feedback, and a paired
//! perturbation harness with sign and nonzero significance tests
//! ([`experiment`]).
//!
//! # Units
//!
//! * flows and arrival rates: patients per **year**
//! * capacities: doctor-hours per **year** (first-visit share already applied)
//! * per-queue rates: patients per doctor-**hour**
//! * waits: **hours**
//! * utilities: utils; waiting sensitivity `alpha`: utils per hour
//!
//! # Gumbel scale
//!
//! **The Gumbel noise scale `gumbel_scale` (`beta`) defaults to 1 for every
//! patient class.** The bundled case-study utilities reproduce the reference
//! choice probabilities only at `beta = 1`; no other value is implied by the
//! source data. Set the field explicitly in scenario files to use a different
//! scale.
//!
//! # Example
//!
//! ```
//! use careq::scenario::{case_study_scenario, CalibrationMethod};
//! use careq::{solve, SolverSettings};
//!
//! let (scenario, calibration) = case_study_scenario(CalibrationMethod::WaitOffsets)?;
//! let eq = solve(&scenario, &SolverSettings::default())?;
//! assert!(eq.grad_norm <= 1e-10);
//! assert!(calibration.residual <= 1e-9);
//! // Waits at the calibrated operating point, in hours.
//! assert!((eq.waits[0] - 0.4333).abs() < 1e-3);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod choice;
pub mod equilibrium;
pub mod experiment;
pub mod model;
pub mod queueing;
pub mod scenario;

pub use equilibrium::{solve, SolverSettings};
pub use model::{Equilibrium, FacilityLevel, PatientClass, Scenario};

/// Crate version string, embedded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
