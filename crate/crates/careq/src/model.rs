//! Shared domain types: patient classes, facility levels, scenarios, and
//! equilibrium records, with validation and JSON (de)serialization.
//!
//! All types are immutable after construction and safe to share across
//! concurrent solver runs. Validation is pure: the same scenario always
//! produces the identical violation list.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Waits above this cap (hours) mark an outcome as infeasible: facilities are
/// open ten hours a day, so longer waiting would spill into the next day and
/// the calibrated sensitivities no longer apply.
pub const FEASIBILITY_CAP_HOURS: f64 = 10.0;

/// Default annual opening hours: 261 working days of 8 hours.
pub const DEFAULT_HOURS_PER_YEAR: f64 = 261.0 * 8.0;

fn default_gumbel_scale() -> f64 {
    1.0
}

fn default_servers() -> u32 {
    1
}

fn default_true() -> bool {
    true
}

fn default_hours_per_year() -> f64 {
    DEFAULT_HOURS_PER_YEAR
}

/// A class of patients sharing arrival volume, waiting-time sensitivity, and
/// noise scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientClass {
    /// Stable identifier; report row labels use its uppercased initial.
    pub id: String,
    /// Annual arrival volume `I_k` (patients/year); must be positive.
    pub arrival_rate: f64,
    /// Disutility per hour of waiting `alpha_k` (utils/hour); must be positive.
    pub alpha: f64,
    /// Gumbel noise scale `beta_k`; defaults to 1 (see crate docs).
    #[serde(default = "default_gumbel_scale")]
    pub gumbel_scale: f64,
    /// Utility of the opt-out alternative (no facility visit, zero wait).
    pub opt_out_utility: f64,
}

/// A facility level: a tier of identical facilities modeled as parallel queues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityLevel {
    /// Stable identifier; report columns use the 1-based level position.
    pub id: String,
    /// Service rate `mu` per server (patients per doctor-hour); positive.
    pub service_rate: f64,
    /// Servers per queue `s`; 1 selects the single-server delay model.
    #[serde(default = "default_servers")]
    pub servers: u32,
    /// Waiting-time multiplier `m >= 1`: the number of identically loaded
    /// sequential queues (consultation, pharmacy, diagnostics, ...) a visit
    /// passes through.
    pub multiplier: f64,
    /// Annual service capacity in doctor-hours/year available for first
    /// visits; positive.
    pub capacity: f64,
    /// Expected wait at zero flow `w0 >= 0` (hours): a congestion-independent
    /// offset added to the queueing delay. Zero for a bare M/M/1 or M/M/s
    /// queue; calibration may set it to absorb unmodeled constant delays.
    #[serde(default)]
    pub zero_flow_wait: f64,
}

impl FacilityLevel {
    /// Saturation flow (patients/year): the arrival rate at which the
    /// expected wait diverges. Equals `capacity * servers * service_rate` and
    /// is monotone in each factor.
    pub fn saturation(&self) -> f64 {
        self.capacity * f64::from(self.servers) * self.service_rate
    }
}

/// A complete problem instance: levels, classes, and the utility matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Facility levels, ordered; positions define utility-matrix columns.
    pub levels: Vec<FacilityLevel>,
    /// Patient classes, ordered; positions define utility-matrix rows.
    pub classes: Vec<PatientClass>,
    /// Reference utilities `ref_utility[k][i]`: utility class `k` assigns
    /// level `i` at zero waiting time (classes x levels).
    pub ref_utility: Vec<Vec<f64>>,
    /// Whether the opt-out alternative participates in choice.
    #[serde(default = "default_true")]
    pub opt_out_enabled: bool,
    /// Annual opening hours used when deriving capacities from staffing data.
    #[serde(default = "default_hours_per_year")]
    pub hours_per_year: f64,
    /// Waits (hours per level) at the operating point the scenario was
    /// calibrated to, if any. Used as the fixed-wait evaluation point of the
    /// no-feedback comparison model and as an optional solver start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_waits: Option<Vec<f64>>,
}

impl Scenario {
    /// Total annual demand over all classes (patients/year).
    pub fn total_demand(&self) -> f64 {
        self.classes.iter().map(|c| c.arrival_rate).sum()
    }

    /// Total saturation flow over all levels (patients/year).
    pub fn total_saturation(&self) -> f64 {
        self.levels.iter().map(FacilityLevel::saturation).sum()
    }
}

/// A computed equilibrium: mutually consistent waits, flows, and choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    /// Expected wait per level (hours); at an equilibrium each entry is at
    /// least the level's `zero_flow_wait`.
    pub waits: Vec<f64>,
    /// Annual flow per level, recomputed exactly from `choice`:
    /// `flows[i] = sum_k arrival_rate[k] * choice[k][i + 1]`.
    pub flows: Vec<f64>,
    /// Choice probabilities per class over `{opt-out} + levels`; each row
    /// sums to 1 within 1e-12. Column 0 is the opt-out probability (all
    /// zeros when opting out is disabled).
    pub choice: Vec<Vec<f64>>,
    /// Potential value at the returned waits.
    pub objective: f64,
    /// Sup-norm of the potential gradient at the returned waits, normalized
    /// by `max(1, total demand)` so the convergence threshold is scale-free.
    pub grad_norm: f64,
    /// Minimizer iterations spent.
    pub iterations: usize,
    /// True iff every wait is at most [`FEASIBILITY_CAP_HOURS`].
    pub feasible: bool,
}

/// A single validation failure: the field that broke and the rule it broke.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Dotted path of the offending field, e.g. `classes[0].alpha`.
    pub field: String,
    /// Human-readable statement of the violated rule.
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Errors from scenario loading and persistence.
#[derive(Debug, Error)]
pub enum ModelError {
    /// Filesystem failure while reading or writing a scenario file.
    #[error("failed to access {path}: {source}")]
    Io {
        /// Offending path.
        path: String,
        /// Underlying I/O error.
        #[source]
        source: std::io::Error,
    },
    /// The file did not parse against the documented schema.
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    /// The parsed scenario breaks one or more invariants.
    #[error("invalid scenario: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(Violation::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

fn check_finite(violations: &mut Vec<Violation>, field: String, value: f64) {
    if !value.is_finite() {
        violations.push(Violation {
            field,
            rule: "must be finite".into(),
        });
    }
}

/// Checks every type invariant and returns the (possibly empty) list of
/// violations. Violations are data, not failures: an invalid scenario is
/// still a value that can be reported on.
// Bounds are written in the negated form `!(x > 0.0)` on purpose: NaN fails
// every ordered comparison, so the negation flags it as a violation too.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut v = Vec::new();

    if s.levels.is_empty() {
        v.push(Violation {
            field: "levels".into(),
            rule: "at least one facility level is required".into(),
        });
    }
    if s.classes.is_empty() {
        v.push(Violation {
            field: "classes".into(),
            rule: "at least one patient class is required".into(),
        });
    }

    for (k, class) in s.classes.iter().enumerate() {
        let f = |name: &str| format!("classes[{k}].{name}");
        check_finite(&mut v, f("arrival_rate"), class.arrival_rate);
        if !(class.arrival_rate > 0.0) {
            v.push(Violation {
                field: f("arrival_rate"),
                rule: "must be positive".into(),
            });
        }
        check_finite(&mut v, f("alpha"), class.alpha);
        if !(class.alpha > 0.0) {
            v.push(Violation {
                field: f("alpha"),
                rule: "must be positive".into(),
            });
        }
        check_finite(&mut v, f("gumbel_scale"), class.gumbel_scale);
        if !(class.gumbel_scale > 0.0) {
            v.push(Violation {
                field: f("gumbel_scale"),
                rule: "must be positive".into(),
            });
        }
        check_finite(&mut v, f("opt_out_utility"), class.opt_out_utility);
    }

    for (i, level) in s.levels.iter().enumerate() {
        let f = |name: &str| format!("levels[{i}].{name}");
        check_finite(&mut v, f("service_rate"), level.service_rate);
        if !(level.service_rate > 0.0) {
            v.push(Violation {
                field: f("service_rate"),
                rule: "must be positive".into(),
            });
        }
        if level.servers < 1 {
            v.push(Violation {
                field: f("servers"),
                rule: "must be at least 1".into(),
            });
        }
        check_finite(&mut v, f("multiplier"), level.multiplier);
        if !(level.multiplier >= 1.0) {
            v.push(Violation {
                field: f("multiplier"),
                rule: "must be at least 1".into(),
            });
        }
        check_finite(&mut v, f("capacity"), level.capacity);
        if !(level.capacity > 0.0) {
            v.push(Violation {
                field: f("capacity"),
                rule: "must be positive".into(),
            });
        }
        check_finite(&mut v, f("zero_flow_wait"), level.zero_flow_wait);
        if !(level.zero_flow_wait >= 0.0) {
            v.push(Violation {
                field: f("zero_flow_wait"),
                rule: "must be nonnegative".into(),
            });
        }
        let sat = level.saturation();
        if !(sat.is_finite() && sat > 0.0) {
            v.push(Violation {
                field: f("saturation"),
                rule: "capacity * servers * service_rate must be finite and positive".into(),
            });
        }
    }

    check_finite(&mut v, "hours_per_year".into(), s.hours_per_year);
    if !(s.hours_per_year > 0.0) {
        v.push(Violation {
            field: "hours_per_year".into(),
            rule: "must be positive".into(),
        });
    }

    if s.ref_utility.len() != s.classes.len() {
        v.push(Violation {
            field: "ref_utility".into(),
            rule: format!(
                "must have one row per class ({} rows for {} classes)",
                s.ref_utility.len(),
                s.classes.len()
            ),
        });
    }
    for (k, row) in s.ref_utility.iter().enumerate() {
        if row.len() != s.levels.len() {
            v.push(Violation {
                field: format!("ref_utility[{k}]"),
                rule: format!(
                    "must have one entry per level ({} entries for {} levels)",
                    row.len(),
                    s.levels.len()
                ),
            });
        }
        for (i, &u) in row.iter().enumerate() {
            check_finite(&mut v, format!("ref_utility[{k}][{i}]"), u);
        }
    }

    if let Some(w_ref) = &s.reference_waits {
        if w_ref.len() != s.levels.len() {
            v.push(Violation {
                field: "reference_waits".into(),
                rule: format!(
                    "must have one entry per level ({} entries for {} levels)",
                    w_ref.len(),
                    s.levels.len()
                ),
            });
        }
        for (i, &w) in w_ref.iter().enumerate() {
            check_finite(&mut v, format!("reference_waits[{i}]"), w);
        }
    }

    // Without an opt-out alternative every patient must be served somewhere,
    // which is only possible when total capacity strictly exceeds demand.
    if !s.opt_out_enabled && !s.classes.is_empty() && !s.levels.is_empty() {
        let saturation = s.total_saturation();
        let demand = s.total_demand();
        if !(saturation > demand) {
            v.push(Violation {
                field: "opt_out_enabled".into(),
                rule: format!(
                    "non-saturation requires total saturation ({saturation}) to strictly \
                     exceed total demand ({demand}) when opting out is disabled"
                ),
            });
        }
    }

    v
}

/// Loads any JSON-encoded value with uniform I/O and parse errors.
pub(crate) fn load_json<T: serde::de::DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<T, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a scenario from a JSON file and validates it.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ModelError> {
    let scenario: Scenario = load_json(path)?;
    let violations = validate_scenario(&scenario);
    if violations.is_empty() {
        Ok(scenario)
    } else {
        Err(ModelError::Invalid(violations))
    }
}

/// Saves a scenario as pretty-printed JSON.
pub fn save_scenario(path: impl AsRef<Path>, s: &Scenario) -> Result<(), ModelError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(s).expect("scenario serialization cannot fail");
    std::fs::write(path, text + "\n").map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}
