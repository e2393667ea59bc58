//! The equilibrium potential, its minimizer, a damped fixed-point oracle,
//! and the capacity-surplus check for scenarios without an opt-out.
//!
//! # Potential
//!
//! For waits `w` over the levels, define
//!
//! ```text
//! Theta(w) = sum_i H_i(w_i)
//!          + sum_k (I_k / alpha_k) * Phi_k(u_k0, u_k1 - alpha_k w_1, ...)
//! ```
//!
//! where `H_i` integrates the inverse delay function of level `i`
//! ([`crate::queueing::DelayModel::h_integral`]) and `Phi_k` is the expected
//! maximum utility of class `k` ([`crate::choice::mnl_phi`]); when opting out
//! is disabled the opt-out coordinate is omitted from `Phi_k`. `Theta` is
//! strictly convex and smooth with
//!
//! ```text
//! dTheta/dw_i = inverse_wait_i(w_i) - sum_k I_k * pi_ki(w)
//! ```
//!
//! so its unique minimizer is exactly the point where every level's wait is
//! generated by the flow that chooses it: the equilibrium.
//!
//! # Solver
//!
//! A damped Newton method with backtracking line search minimizes `Theta`;
//! if the Hessian factorization ever fails numerically the iteration falls
//! back to a line-searched gradient step. Because the delay functions are
//! extended linearly below their zero-flow waits, `Theta` is defined on all
//! of `R^n` and no bound handling is needed. Convergence is certified on the
//! gradient sup-norm normalized by `max(1, total demand)`, making the
//! default tolerance meaningful at any demand scale.
//!
//! `solve` is reentrant and stateless; concurrent solves may share a
//! `Scenario`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::choice::{mnl_phi, mnl_probabilities, UtilityVector};
use crate::model::{validate_scenario, Equilibrium, Scenario, Violation, FEASIBILITY_CAP_HOURS};
use crate::queueing::DelayModel;

/// Start point of the minimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StartPoint {
    /// Start at each level's zero-flow wait (always in domain; the default).
    ZeroFlow,
    /// Start at the scenario's `reference_waits`.
    Reference,
    /// Start at an explicit wait vector.
    Explicit(Vec<f64>),
}

/// Minimizer configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Convergence threshold on the gradient sup-norm, normalized by
    /// `max(1, total demand)`.
    pub grad_tol: f64,
    /// Iteration budget.
    pub max_iters: usize,
    /// Start point.
    pub start: StartPoint,
    /// Relaxation factor in `(0, 1]` used by [`fixed_point_oracle`].
    pub damping: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            grad_tol: 1e-10,
            max_iters: 200,
            start: StartPoint::ZeroFlow,
            damping: 0.3,
        }
    }
}

/// Value, gradient, and curvature report of the potential at a wait vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    /// Potential value.
    pub theta: f64,
    /// Raw gradient per level (annual-flow units, not normalized).
    pub gradient: Vec<f64>,
    /// Whether the Hessian factorized as positive definite at this point.
    pub hessian_pd: bool,
}

/// Verdict of the capacity-surplus check required when opting out is
/// disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonSaturationReport {
    /// True iff total saturation strictly exceeds total demand.
    pub holds: bool,
    /// Sum of level saturation flows (patients/year).
    pub total_saturation: f64,
    /// Sum of class arrival rates (patients/year).
    pub total_demand: f64,
    /// `total_saturation - total_demand`.
    pub margin: f64,
}

/// Solver failures.
#[derive(Debug, Error)]
pub enum SolveError {
    /// The scenario failed validation.
    #[error("invalid scenario: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    /// Opting out is disabled but capacity does not strictly exceed demand.
    #[error(
        "non-saturation violated: total saturation {total_saturation} does not strictly \
         exceed total demand {total_demand}"
    )]
    NonSaturation {
        /// Sum of level saturation flows.
        total_saturation: f64,
        /// Sum of class arrival rates.
        total_demand: f64,
    },
    /// The iteration budget ran out above tolerance.
    #[error(
        "no convergence after {iterations} iterations: normalized gradient norm {grad_norm} \
         above tolerance {tolerance}"
    )]
    MaxIters {
        /// Iterations spent.
        iterations: usize,
        /// Normalized gradient sup-norm at the last iterate.
        grad_norm: f64,
        /// Requested tolerance.
        tolerance: f64,
    },
    /// The fixed-point oracle diverged or left the stable domain.
    #[error("fixed-point iteration diverged: {0}")]
    OracleDiverged(String),
}

fn delay_models(s: &Scenario) -> Vec<DelayModel> {
    s.levels
        .iter()
        .map(|level| DelayModel::from_level(level, s.hours_per_year))
        .collect()
}

/// Class-`k` utilities at waits `w`, ordered `{opt-out} + levels` when the
/// opt-out participates and `levels` only otherwise.
fn class_utilities(s: &Scenario, w: &[f64], k: usize) -> UtilityVector {
    let class = &s.classes[k];
    let mut values = Vec::with_capacity(s.levels.len() + 1);
    if s.opt_out_enabled {
        values.push(class.opt_out_utility);
    }
    for (i, &wi) in w.iter().enumerate() {
        values.push(s.ref_utility[k][i] - class.alpha * wi);
    }
    UtilityVector {
        values,
        scale: class.gumbel_scale,
    }
}

/// Choice matrix at waits `w`: one row per class over `{opt-out} + levels`.
/// The opt-out column is identically zero when opting out is disabled.
pub(crate) fn choice_matrix(s: &Scenario, w: &[f64]) -> Vec<Vec<f64>> {
    (0..s.classes.len())
        .map(|k| {
            let probs = mnl_probabilities(&class_utilities(s, w, k)).probabilities;
            if s.opt_out_enabled {
                probs
            } else {
                let mut row = Vec::with_capacity(probs.len() + 1);
                row.push(0.0);
                row.extend(probs);
                row
            }
        })
        .collect()
}

/// Level flows implied by a choice matrix: `flows[i] = sum_k I_k * pi[k][i+1]`.
pub(crate) fn flows_from_choice(s: &Scenario, choice: &[Vec<f64>]) -> Vec<f64> {
    (0..s.levels.len())
        .map(|i| {
            s.classes
                .iter()
                .zip(choice)
                .map(|(class, row)| class.arrival_rate * row[i + 1])
                .sum()
        })
        .collect()
}

/// Evaluates the potential, its gradient, and whether the Hessian is
/// positive definite at `w`.
pub fn theta(s: &Scenario, w: &[f64]) -> ObjectiveReport {
    assert_eq!(w.len(), s.levels.len(), "one wait per level");
    let delays = delay_models(s);
    let choice = choice_matrix(s, w);
    ObjectiveReport {
        theta: theta_value(s, &delays, w),
        gradient: theta_gradient(s, &delays, w, &choice),
        hessian_pd: cholesky(theta_hessian(s, &delays, w, &choice)).is_some(),
    }
}

fn theta_value(s: &Scenario, delays: &[DelayModel], w: &[f64]) -> f64 {
    let mut value = 0.0;
    for (d, &wi) in delays.iter().zip(w) {
        value += d.h_integral(wi);
    }
    for (k, class) in s.classes.iter().enumerate() {
        value += class.arrival_rate / class.alpha * mnl_phi(&class_utilities(s, w, k));
    }
    value
}

fn theta_gradient(s: &Scenario, delays: &[DelayModel], w: &[f64], choice: &[Vec<f64>]) -> Vec<f64> {
    (0..s.levels.len())
        .map(|i| {
            let inflow: f64 = s
                .classes
                .iter()
                .zip(choice)
                .map(|(class, row)| class.arrival_rate * row[i + 1])
                .sum();
            delays[i].inverse_wait(w[i]) - inflow
        })
        .collect()
}

/// Hessian of the potential: diagonal inverse-delay slopes plus one
/// rank-adjusted softmax curvature term per class,
/// `H = diag(dinv) + sum_k I_k alpha_k beta_k (diag(pi_k) - pi_k pi_k^T)`
/// with `pi_k` restricted to the level coordinates.
fn theta_hessian(
    s: &Scenario,
    delays: &[DelayModel],
    w: &[f64],
    choice: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let n = s.levels.len();
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        h[i][i] = delays[i].inverse_wait_derivative(w[i]);
    }
    for (k, class) in s.classes.iter().enumerate() {
        let weight = class.arrival_rate * class.alpha * class.gumbel_scale;
        let pi = &choice[k][1..];
        for i in 0..n {
            for j in 0..n {
                let kronecker = if i == j { pi[i] } else { 0.0 };
                h[i][j] += weight * (kronecker - pi[i] * pi[j]);
            }
        }
    }
    h
}

/// Cholesky factorization (lower triangular); `None` if the matrix is not
/// numerically positive definite.
// Index loops mirror the textbook recurrences; iterator forms obscure them.
#[allow(clippy::needless_range_loop)]
fn cholesky(mut a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= a[i][k] * a[j][k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                a[i][i] = sum.sqrt();
            } else {
                a[i][j] = sum / a[j][j];
            }
        }
        for j in (i + 1)..n {
            a[i][j] = 0.0;
        }
    }
    Some(a)
}

/// Solves `L L^T x = -g` given the Cholesky factor `L`.
fn solve_newton_step(l: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = -g[i];
        for k in 0..i {
            sum -= l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    x
}

fn start_waits(s: &Scenario, start: &StartPoint) -> Result<Vec<f64>, SolveError> {
    match start {
        StartPoint::ZeroFlow => Ok(s.levels.iter().map(|l| l.zero_flow_wait).collect()),
        StartPoint::Reference => s.reference_waits.clone().ok_or_else(|| {
            SolveError::Invalid(vec![Violation {
                field: "reference_waits".into(),
                rule: "the reference start point requires reference_waits".into(),
            }])
        }),
        StartPoint::Explicit(w) => {
            if w.len() == s.levels.len() && w.iter().all(|x| x.is_finite()) {
                Ok(w.clone())
            } else {
                Err(SolveError::Invalid(vec![Violation {
                    field: "start".into(),
                    rule: "explicit start must supply one finite wait per level".into(),
                }]))
            }
        }
    }
}

fn build_equilibrium(
    s: &Scenario,
    delays: &[DelayModel],
    w: Vec<f64>,
    iterations: usize,
) -> Equilibrium {
    let choice = choice_matrix(s, &w);
    let flows = flows_from_choice(s, &choice);
    let gradient = theta_gradient(s, delays, &w, &choice);
    let scale = s.total_demand().max(1.0);
    let grad_norm = gradient.iter().fold(0.0f64, |m, g| m.max(g.abs())) / scale;
    let feasible = w.iter().all(|&wi| wi <= FEASIBILITY_CAP_HOURS);
    let objective = theta_value(s, delays, &w);
    Equilibrium {
        waits: w,
        flows,
        choice,
        objective,
        grad_norm,
        iterations,
        feasible,
    }
}

fn validated(s: &Scenario) -> Result<(), SolveError> {
    let violations = validate_scenario(s);
    // An otherwise-valid scenario that only lacks capacity surplus gets the
    // dedicated error so callers can distinguish "fix the data" from "add
    // capacity or enable the opt-out".
    let only_nonsaturation = violations.len() == 1
        && violations[0].field == "opt_out_enabled"
        && violations[0].rule.contains("non-saturation");
    if only_nonsaturation {
        let report = check_nonsaturation(s);
        return Err(SolveError::NonSaturation {
            total_saturation: report.total_saturation,
            total_demand: report.total_demand,
        });
    }
    if !violations.is_empty() {
        return Err(SolveError::Invalid(violations));
    }
    Ok(())
}

/// Computes the unique equilibrium of a scenario by minimizing the potential
/// with a damped Newton method.
///
/// The returned record satisfies, up to the convergence tolerance: choice
/// rows are softmax probabilities at the returned waits, flows are recomputed
/// exactly from the choice matrix, every flow is strictly below saturation,
/// and each level's wait regenerates its flow (`wait(flows[i]) = waits[i]`
/// within 1e-8 relative at default settings).
pub fn solve(s: &Scenario, cfg: &SolverSettings) -> Result<Equilibrium, SolveError> {
    assert!(cfg.grad_tol > 0.0, "grad_tol must be positive");
    assert!(cfg.max_iters >= 1, "max_iters must be at least 1");
    validated(s)?;

    let delays = delay_models(s);
    let mut w = start_waits(s, &cfg.start)?;
    let scale = s.total_demand().max(1.0);
    let mut value = theta_value(s, &delays, &w);

    for iteration in 0..cfg.max_iters {
        let choice = choice_matrix(s, &w);
        let gradient = theta_gradient(s, &delays, &w, &choice);
        let grad_norm = gradient.iter().fold(0.0f64, |m, g| m.max(g.abs())) / scale;
        if grad_norm <= cfg.grad_tol {
            return Ok(build_equilibrium(s, &delays, w, iteration));
        }

        // Newton direction when the curvature model factorizes; otherwise a
        // scale-normalized gradient step. Both descend, so the backtracking
        // line search below always terminates.
        let direction = match cholesky(theta_hessian(s, &delays, &w, &choice)) {
            Some(l) => solve_newton_step(&l, &gradient),
            None => {
                let norm = gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
                gradient.iter().map(|g| -g / norm).collect()
            }
        };

        let slope: f64 = gradient.iter().zip(&direction).map(|(g, d)| g * d).sum();
        debug_assert!(slope < 0.0, "search direction must descend");

        let mut step = 1.0;
        let mut accepted = false;
        let raw_norm = grad_norm * scale;
        for _ in 0..60 {
            let candidate: Vec<f64> = w
                .iter()
                .zip(&direction)
                .map(|(wi, d)| wi + step * d)
                .collect();
            let candidate_value = theta_value(s, &delays, &candidate);
            let target = value + 1e-4 * step * slope;
            // Once the predicted decrease falls below the objective's own
            // floating-point resolution (the target rounds back to the current
            // value), objective comparisons are noise. First-order progress is
            // still measurable there, so acceptance switches to a strict drop
            // in the gradient norm.
            let ok = if target < value {
                candidate_value <= target
            } else {
                let candidate_grad =
                    theta_gradient(s, &delays, &candidate, &choice_matrix(s, &candidate));
                candidate_grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) < raw_norm
            };
            if ok {
                w = candidate;
                value = candidate_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // The step underflowed the line search: we are at the numerical
            // floor of the objective. Report convergence state honestly.
            return if grad_norm <= cfg.grad_tol {
                Ok(build_equilibrium(s, &delays, w, iteration))
            } else {
                Err(SolveError::MaxIters {
                    iterations: iteration,
                    grad_norm,
                    tolerance: cfg.grad_tol,
                })
            };
        }
    }

    let choice = choice_matrix(s, &w);
    let gradient = theta_gradient(s, &delays, &w, &choice);
    let grad_norm = gradient.iter().fold(0.0f64, |m, g| m.max(g.abs())) / scale;
    if grad_norm <= cfg.grad_tol {
        return Ok(build_equilibrium(s, &delays, w, cfg.max_iters));
    }
    Err(SolveError::MaxIters {
        iterations: cfg.max_iters,
        grad_norm,
        tolerance: cfg.grad_tol,
    })
}

/// Independent cross-check solver: damped fixed-point iteration
/// `w <- (1 - damping) * w + damping * wait(flows(choice(w)))`.
///
/// Runs until the update residual falls below 1e-13 (relative to the wait
/// scale) or `iters` iterations elapse, returning the final state either
/// way; errors only on detected divergence (residual growing tenfold over 50
/// iterations) or on leaving the stable flow domain. Used to validate
/// [`solve`], never as the primary solver.
pub fn fixed_point_oracle(
    s: &Scenario,
    damping: f64,
    iters: usize,
) -> Result<Equilibrium, SolveError> {
    assert!(
        damping > 0.0 && damping <= 1.0,
        "damping must lie in (0, 1]"
    );
    validated(s)?;

    let delays = delay_models(s);
    let mut w: Vec<f64> = s.levels.iter().map(|l| l.zero_flow_wait).collect();
    let mut residual_history: Vec<f64> = Vec::new();
    let mut used = 0;

    for iteration in 0..iters {
        used = iteration + 1;
        let choice = choice_matrix(s, &w);
        let flows = flows_from_choice(s, &choice);
        let mut target = Vec::with_capacity(w.len());
        for (d, &x) in delays.iter().zip(&flows) {
            match d.wait(x) {
                Ok(wi) => target.push(wi),
                Err(e) => return Err(SolveError::OracleDiverged(e.to_string())),
            }
        }
        let residual = w
            .iter()
            .zip(&target)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        residual_history.push(residual);
        if residual_history.len() > 50 {
            let before = residual_history[residual_history.len() - 51];
            if residual > 10.0 * before && residual > 1e-9 {
                return Err(SolveError::OracleDiverged(format!(
                    "residual grew from {before} to {residual} over 50 iterations"
                )));
            }
        }
        let wait_scale = w.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        if residual <= 1e-13 * wait_scale {
            break;
        }
        for (wi, t) in w.iter_mut().zip(&target) {
            *wi = (1.0 - damping) * *wi + damping * t;
        }
    }

    Ok(build_equilibrium(s, &delays, w, used))
}

/// Compares total saturation against total demand; the strict surplus is
/// required for equilibria to exist when opting out is impossible.
pub fn check_nonsaturation(s: &Scenario) -> NonSaturationReport {
    let total_saturation = s.total_saturation();
    let total_demand = s.total_demand();
    NonSaturationReport {
        holds: total_saturation > total_demand,
        total_saturation,
        total_demand,
        margin: total_saturation - total_demand,
    }
}
