//! The urban-China hospital case study: facility and preference tables,
//! baseline assembly, exact-fit calibration, the built-in policy
//! interventions, and the congestion-blind comparison model.
//!
//! # Data model
//!
//! Two bundled tables drive the case study. The facility table
//! ([`FacilityParameters`]) describes the three tiers — community/primary,
//! secondary, tertiary — with their counts, doctors per facility, hourly
//! service rates, waiting-time multipliers, visit times, and current staff
//! skill / equipment grades. The preference table ([`AttributeUtilities`])
//! holds, per patient class (perceived-mild and perceived-severe), the
//! utility of each tier *at the reference waits*, the opt-out utility, the
//! waiting sensitivity `alpha`, and the stated-preference utilities of staff
//! skill levels and equipment grades used to assemble interventions.
//!
//! Reference utilities embed the reference waits once at build time:
//! `u_ref[k][i] = zero_wait_utility[k][i] + alpha_k * w_ref_i`. Interventions
//! that change `alpha` deliberately do **not** rebuild `u_ref`; the
//! preference for a tier at the reference point is survey data, while
//! `alpha` scales only the response to wait changes.
//!
//! # Calibration
//!
//! `build_baseline` uses nominal capacities (facilities × doctors ×
//! first-visit share × hours/year). Nominal capacities reproduce the
//! reference waits only approximately, so [`calibrate`] closes the gap
//! exactly, by either of two single-pass methods:
//!
//! * [`CalibrationMethod::WaitOffsets`] (default): keep capacities nominal
//!   and set each level's zero-flow wait so that offset + congestion delay
//!   at the reference flows equals the reference wait.
//! * [`CalibrationMethod::CapacityFactors`]: keep offsets and scale each
//!   level's capacity by the factor that makes the congestion delay alone
//!   hit the reference wait.
//!
//! Both produce a scenario whose equilibrium is the reference point to
//! machine precision ([`CalibrationResult::residual`] ≤ 1e-9 hours). They
//! differ under interventions: offsets preserve the nominal service volumes
//! that the published intervention outcomes imply, which is why offsets are
//! the default. The factor method remains available for sensitivity checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::{choice_matrix, flows_from_choice, solve, SolveError, SolverSettings};
use crate::model::{
    load_json, FacilityLevel, ModelError, PatientClass, Scenario, Violation, FEASIBILITY_CAP_HOURS,
};
use crate::queueing::DelayModel;
use std::path::Path;

/// Annual outpatient demand of the case study (visits/year).
pub const ANNUAL_DEMAND: f64 = 160_432_700.0;

/// Share of demand perceiving their condition as mild.
pub const MILD_SHARE: f64 = 0.479;

/// Staff skill grades appearing in the preference survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkillLevel {
    /// Junior physician.
    Junior,
    /// Senior physician.
    Senior,
    /// Expert physician.
    Expert,
}

/// Equipment grades appearing in the preference survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquipmentGrade {
    /// Obsolete equipment.
    Obsolete,
    /// Standard equipment.
    Standard,
    /// Advanced equipment.
    Advanced,
}

/// Per-class utilities of the three staff skill grades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillUtilities {
    /// Utility of a junior physician.
    pub junior: f64,
    /// Utility of a senior physician.
    pub senior: f64,
    /// Utility of an expert physician.
    pub expert: f64,
}

impl SkillUtilities {
    /// Utility of a given grade.
    pub fn value(&self, level: SkillLevel) -> f64 {
        match level {
            SkillLevel::Junior => self.junior,
            SkillLevel::Senior => self.senior,
            SkillLevel::Expert => self.expert,
        }
    }
}

/// Per-class utilities of the three equipment grades. Under effects coding
/// the standard grade carries `-(obsolete + advanced)`, i.e. the three
/// values sum to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquipmentUtilities {
    /// Utility of obsolete equipment.
    pub obsolete: f64,
    /// Utility of standard equipment.
    pub standard: f64,
    /// Utility of advanced equipment.
    pub advanced: f64,
}

impl EquipmentUtilities {
    /// Utility of a given grade.
    pub fn value(&self, grade: EquipmentGrade) -> f64 {
        match grade {
            EquipmentGrade::Obsolete => self.obsolete,
            EquipmentGrade::Standard => self.standard,
            EquipmentGrade::Advanced => self.advanced,
        }
    }
}

/// Survey-derived preferences of one patient class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAttributes {
    /// Class label.
    pub id: String,
    /// Waiting sensitivity (utility per hour of waiting).
    pub alpha: f64,
    /// Utility of not visiting any facility.
    pub opt_out_utility: f64,
    /// Utility of each facility level when experiencing the reference wait
    /// (one entry per level).
    pub zero_wait_utilities: Vec<f64>,
    /// Stated-preference utilities of staff skill grades.
    pub skill: SkillUtilities,
    /// Stated-preference utilities of equipment grades.
    pub equipment: EquipmentUtilities,
}

/// The preference table: one entry per patient class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeUtilities {
    /// Per-class survey attributes.
    pub classes: Vec<ClassAttributes>,
}

/// Tolerance for the effects-coding identity `obsolete + standard +
/// advanced = 0`; the survey values satisfy it exactly, so any slack here
/// only absorbs decimal-to-binary conversion.
const EFFECTS_CODING_TOL: f64 = 1e-12;

impl AttributeUtilities {
    /// Structural checks: finite values, positive sensitivities, and the
    /// effects-coding identity on equipment utilities.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.classes.is_empty() {
            v.push(Violation {
                field: "classes".into(),
                rule: "at least one patient class is required".into(),
            });
        }
        for (k, c) in self.classes.iter().enumerate() {
            let f = |name: &str| format!("classes[{k}].{name}");
            if !(c.alpha.is_finite() && c.alpha > 0.0) {
                v.push(Violation {
                    field: f("alpha"),
                    rule: format!("must be finite and positive, got {}", c.alpha),
                });
            }
            if !c.opt_out_utility.is_finite() {
                v.push(Violation {
                    field: f("opt_out_utility"),
                    rule: "must be finite".into(),
                });
            }
            for (i, &u) in c.zero_wait_utilities.iter().enumerate() {
                if !u.is_finite() {
                    v.push(Violation {
                        field: f(&format!("zero_wait_utilities[{i}]")),
                        rule: "must be finite".into(),
                    });
                }
            }
            for (name, x) in [
                ("skill.junior", c.skill.junior),
                ("skill.senior", c.skill.senior),
                ("skill.expert", c.skill.expert),
                ("equipment.obsolete", c.equipment.obsolete),
                ("equipment.standard", c.equipment.standard),
                ("equipment.advanced", c.equipment.advanced),
            ] {
                if !x.is_finite() {
                    v.push(Violation {
                        field: f(name),
                        rule: "must be finite".into(),
                    });
                }
            }
            let coding = c.equipment.obsolete + c.equipment.standard + c.equipment.advanced;
            if coding.abs() > EFFECTS_CODING_TOL {
                v.push(Violation {
                    field: f("equipment"),
                    rule: format!(
                        "effects coding requires standard = -(obsolete + advanced); \
                         the grades sum to {coding}"
                    ),
                });
            }
        }
        v
    }

    /// Loads a preference table from JSON.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        load_json(path)
    }
}

/// One facility level of the supply table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityRow {
    /// Level label.
    pub id: String,
    /// Number of facilities at this level.
    pub facilities: f64,
    /// Doctors on duty per facility.
    pub doctors_per_facility: f64,
    /// Consultations per doctor-hour.
    pub service_rate: f64,
    /// Parallel consultation channels per queue.
    #[serde(default = "default_servers")]
    pub servers: u32,
    /// Ratio of total waiting to first-consultation queueing delay.
    pub multiplier: f64,
    /// Total visit time including waiting (hours).
    pub total_visit_hours: f64,
    /// Visit time other than waiting (minutes).
    pub non_wait_visit_minutes: f64,
    /// Current staff skill grade at this level.
    pub skill: SkillLevel,
    /// Current equipment grade at this level.
    pub equipment: EquipmentGrade,
}

fn default_servers() -> u32 {
    1
}

/// The supply table: facility levels plus the scalars converting counts to
/// annual first-visit capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityParameters {
    /// Working days per year.
    pub working_days_per_year: f64,
    /// Working hours per day.
    pub hours_per_day: f64,
    /// Share of doctor time available for first visits.
    pub first_visit_fraction: f64,
    /// One row per facility level.
    pub levels: Vec<FacilityRow>,
}

impl FacilityParameters {
    /// Working hours per doctor-year.
    pub fn hours_per_year(&self) -> f64 {
        self.working_days_per_year * self.hours_per_day
    }

    /// Nominal first-visit capacity of level `i` in doctor-hours/year:
    /// facilities × doctors × first-visit share × hours/year.
    pub fn nominal_capacity(&self, i: usize) -> f64 {
        let row = &self.levels[i];
        row.facilities
            * row.doctors_per_facility
            * self.first_visit_fraction
            * self.hours_per_year()
    }

    /// Reference wait of level `i`: total visit time minus its non-waiting
    /// part.
    pub fn reference_wait(&self, i: usize) -> f64 {
        let row = &self.levels[i];
        row.total_visit_hours - row.non_wait_visit_minutes / 60.0
    }

    /// Reference waits of all levels (hours).
    pub fn reference_waits(&self) -> Vec<f64> {
        (0..self.levels.len())
            .map(|i| self.reference_wait(i))
            .collect()
    }

    /// Structural checks on the supply table.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.levels.is_empty() {
            v.push(Violation {
                field: "levels".into(),
                rule: "at least one facility level is required".into(),
            });
        }
        for (name, x) in [
            ("working_days_per_year", self.working_days_per_year),
            ("hours_per_day", self.hours_per_day),
            ("first_visit_fraction", self.first_visit_fraction),
        ] {
            if !(x.is_finite() && x > 0.0) {
                v.push(Violation {
                    field: name.into(),
                    rule: format!("must be finite and positive, got {x}"),
                });
            }
        }
        for (i, row) in self.levels.iter().enumerate() {
            let f = |name: &str| format!("levels[{i}].{name}");
            for (name, x) in [
                ("facilities", row.facilities),
                ("doctors_per_facility", row.doctors_per_facility),
                ("service_rate", row.service_rate),
                ("total_visit_hours", row.total_visit_hours),
            ] {
                if !(x.is_finite() && x > 0.0) {
                    v.push(Violation {
                        field: f(name),
                        rule: format!("must be finite and positive, got {x}"),
                    });
                }
            }
            if row.servers == 0 {
                v.push(Violation {
                    field: f("servers"),
                    rule: "must be at least 1".into(),
                });
            }
            if !(row.multiplier.is_finite() && row.multiplier >= 1.0) {
                v.push(Violation {
                    field: f("multiplier"),
                    rule: format!("must be finite and at least 1, got {}", row.multiplier),
                });
            }
            if !(row.non_wait_visit_minutes.is_finite() && row.non_wait_visit_minutes >= 0.0) {
                v.push(Violation {
                    field: f("non_wait_visit_minutes"),
                    rule: format!(
                        "must be finite and non-negative, got {}",
                        row.non_wait_visit_minutes
                    ),
                });
            }
            if row.total_visit_hours.is_finite()
                && row.non_wait_visit_minutes.is_finite()
                && self.reference_wait(i) <= 0.0
            {
                v.push(Violation {
                    field: f("total_visit_hours"),
                    rule: "total visit time must exceed its non-waiting part".into(),
                });
            }
        }
        v
    }

    /// Loads a supply table from JSON.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        load_json(path)
    }
}

/// A policy intervention: additive utility edits plus optional opt-out and
/// sensitivity replacements. Empty vectors mean "no edits of that kind".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    /// Unique label.
    pub name: String,
    /// Additive edits to the reference utilities, `[class][level]`; empty
    /// for none.
    #[serde(default)]
    pub utility_deltas: Vec<Vec<f64>>,
    /// Per-class opt-out replacements; `null` keeps the baseline value.
    #[serde(default)]
    pub opt_out_overrides: Vec<Option<f64>>,
    /// Per-class waiting-sensitivity replacements; `null` keeps the
    /// baseline value.
    #[serde(default)]
    pub alpha_overrides: Vec<Option<f64>>,
}

impl InterventionSpec {
    /// Dimension and finiteness checks against a target scenario.
    pub fn validate_for(&self, s: &Scenario) -> Vec<Violation> {
        let mut v = Vec::new();
        let f = |name: &str| format!("intervention[{}].{name}", self.name);
        if !self.utility_deltas.is_empty() {
            if self.utility_deltas.len() != s.classes.len() {
                v.push(Violation {
                    field: f("utility_deltas"),
                    rule: format!(
                        "expected {} class rows, got {}",
                        s.classes.len(),
                        self.utility_deltas.len()
                    ),
                });
            } else {
                for (k, row) in self.utility_deltas.iter().enumerate() {
                    if row.len() != s.levels.len() {
                        v.push(Violation {
                            field: f(&format!("utility_deltas[{k}]")),
                            rule: format!(
                                "expected {} level entries, got {}",
                                s.levels.len(),
                                row.len()
                            ),
                        });
                    }
                    for (i, d) in row.iter().enumerate() {
                        if !d.is_finite() {
                            v.push(Violation {
                                field: f(&format!("utility_deltas[{k}][{i}]")),
                                rule: "must be finite".into(),
                            });
                        }
                    }
                }
            }
        }
        for (name, overrides) in [
            ("opt_out_overrides", &self.opt_out_overrides),
            ("alpha_overrides", &self.alpha_overrides),
        ] {
            if !overrides.is_empty() && overrides.len() != s.classes.len() {
                v.push(Violation {
                    field: f(name),
                    rule: format!(
                        "expected {} class entries, got {}",
                        s.classes.len(),
                        overrides.len()
                    ),
                });
            }
            for (k, o) in overrides.iter().enumerate() {
                if let Some(x) = o {
                    if !x.is_finite() {
                        v.push(Violation {
                            field: f(&format!("{name}[{k}]")),
                            rule: "must be finite".into(),
                        });
                    }
                }
            }
        }
        for (k, o) in self.alpha_overrides.iter().enumerate() {
            if let Some(x) = o {
                if x.is_finite() && *x <= 0.0 {
                    v.push(Violation {
                        field: f(&format!("alpha_overrides[{k}]")),
                        rule: format!("waiting sensitivity must be positive, got {x}"),
                    });
                }
            }
        }
        v
    }
}

/// How [`calibrate`] closes the gap between nominal capacities and the
/// reference waits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMethod {
    /// Keep nominal capacities; absorb the gap into per-level zero-flow
    /// wait offsets (the default; preserves nominal service volumes under
    /// interventions).
    #[default]
    WaitOffsets,
    /// Keep zero-flow waits; scale each level's capacity so congestion
    /// delay alone reproduces the reference wait.
    CapacityFactors,
}

/// What calibration did, reported rather than hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Share of demand in the first (mild) class.
    pub mild_share: f64,
    /// Multiplicative capacity adjustment per level (all 1 under
    /// [`CalibrationMethod::WaitOffsets`]).
    pub capacity_factors: Vec<f64>,
    /// Zero-flow wait per level in hours (unchanged by
    /// [`CalibrationMethod::CapacityFactors`]).
    pub wait_offsets: Vec<f64>,
    /// Max |equilibrium wait − reference wait| over levels, in hours, after
    /// calibration.
    pub residual: f64,
}

/// Outcome of the congestion-blind model: choice fixed at the reference
/// waits, waits then read off once from the resulting flows. Waits may be
/// infinite (flow at or beyond saturation); that is data here, not an error.
#[derive(Debug, Clone, PartialEq)]
pub struct MnlOutcome {
    /// One-shot waits per level (hours; may be infinite).
    pub waits: Vec<f64>,
    /// Annual flows per level implied by the fixed choice probabilities.
    pub flows: Vec<f64>,
    /// Choice probabilities per class over `{opt-out} + levels`.
    pub choice: Vec<Vec<f64>>,
    /// True iff every wait is finite and at most the 10-hour cap.
    pub feasible: bool,
}

/// Failures of scenario assembly, calibration, or intervention application.
#[derive(Debug, Error)]
pub enum ScenarioError {
    /// Input tables or intervention specs failed validation.
    #[error("invalid input: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    /// A reference wait cannot be produced by any stable configuration.
    #[error("cannot calibrate level {level}: {reason}")]
    Calibration {
        /// Level label.
        level: String,
        /// Why the reference wait is unreachable.
        reason: String,
    },
    /// The post-calibration verification solve failed.
    #[error(transparent)]
    Solve(#[from] SolveError),
    /// A data file failed to load.
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Assembles the baseline scenario from the two tables: demand split by
/// `mild_share` between exactly two classes (mild first), reference
/// utilities embedding the reference waits, nominal capacities, zero wait
/// offsets, and unit noise scale.
pub fn build_baseline(
    attrs: &AttributeUtilities,
    supply: &FacilityParameters,
    total_demand: f64,
    mild_share: f64,
) -> Result<Scenario, ScenarioError> {
    let mut violations = attrs.validate();
    violations.extend(supply.validate());
    if attrs.classes.len() != 2 {
        violations.push(Violation {
            field: "classes".into(),
            rule: format!(
                "the baseline splits demand between exactly two classes, got {}",
                attrs.classes.len()
            ),
        });
    }
    if !(total_demand.is_finite() && total_demand > 0.0) {
        violations.push(Violation {
            field: "total_demand".into(),
            rule: format!("must be finite and positive, got {total_demand}"),
        });
    }
    if !(mild_share > 0.0 && mild_share < 1.0) {
        violations.push(Violation {
            field: "mild_share".into(),
            rule: format!("must lie strictly between 0 and 1, got {mild_share}"),
        });
    }
    for (k, c) in attrs.classes.iter().enumerate() {
        if c.zero_wait_utilities.len() != supply.levels.len() {
            violations.push(Violation {
                field: format!("classes[{k}].zero_wait_utilities"),
                rule: format!(
                    "expected one utility per facility level ({}), got {}",
                    supply.levels.len(),
                    c.zero_wait_utilities.len()
                ),
            });
        }
    }
    if !violations.is_empty() {
        return Err(ScenarioError::Invalid(violations));
    }

    let w_ref = supply.reference_waits();
    let levels = supply
        .levels
        .iter()
        .enumerate()
        .map(|(i, row)| FacilityLevel {
            id: row.id.clone(),
            service_rate: row.service_rate,
            servers: row.servers,
            multiplier: row.multiplier,
            capacity: supply.nominal_capacity(i),
            zero_flow_wait: 0.0,
        })
        .collect();
    let classes = attrs
        .classes
        .iter()
        .enumerate()
        .map(|(k, c)| PatientClass {
            id: c.id.clone(),
            arrival_rate: if k == 0 {
                total_demand * mild_share
            } else {
                total_demand * (1.0 - mild_share)
            },
            alpha: c.alpha,
            gumbel_scale: 1.0,
            opt_out_utility: c.opt_out_utility,
        })
        .collect();
    let ref_utility = attrs
        .classes
        .iter()
        .map(|c| {
            c.zero_wait_utilities
                .iter()
                .zip(&w_ref)
                .map(|(&u, &w)| u + c.alpha * w)
                .collect()
        })
        .collect();

    let scenario = Scenario {
        levels,
        classes,
        ref_utility,
        opt_out_enabled: true,
        hours_per_year: supply.hours_per_year(),
        reference_waits: Some(w_ref),
    };
    let violations = crate::model::validate_scenario(&scenario);
    if violations.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Invalid(violations))
    }
}

/// Adjusts a scenario so its equilibrium waits equal `w_ref` exactly.
///
/// Both methods solve the same three-step problem per level: freeze the
/// choice probabilities at `w_ref`, compute the implied annual flows, and
/// pick the one free parameter (zero-flow offset or capacity factor) that
/// makes the level's wait at those flows equal its reference wait. Because
/// the choice probabilities at `w_ref` do not depend on the adjusted
/// parameters, the fit is exact and one pass suffices; the returned
/// residual re-verifies this with a full equilibrium solve.
pub fn calibrate(
    s: &Scenario,
    w_ref: &[f64],
    method: CalibrationMethod,
) -> Result<(Scenario, CalibrationResult), ScenarioError> {
    let violations = crate::model::validate_scenario(s);
    if !violations.is_empty() {
        return Err(ScenarioError::Invalid(violations));
    }
    if w_ref.len() != s.levels.len() || w_ref.iter().any(|w| !w.is_finite()) {
        return Err(ScenarioError::Invalid(vec![Violation {
            field: "w_ref".into(),
            rule: format!(
                "expected {} finite reference waits, got {:?}",
                s.levels.len(),
                w_ref
            ),
        }]));
    }

    let choice = choice_matrix(s, w_ref);
    let flows = flows_from_choice(s, &choice);

    let mut calibrated = s.clone();
    let mut capacity_factors = vec![1.0; s.levels.len()];
    let mut wait_offsets = Vec::with_capacity(s.levels.len());

    for (i, level) in s.levels.iter().enumerate() {
        match method {
            CalibrationMethod::WaitOffsets => {
                // Congestion delay at the reference flows with the offset
                // stripped; the offset is whatever remains of the target.
                let congestion_only = DelayModel {
                    zero_flow_wait: 0.0,
                    ..DelayModel::from_level(level, s.hours_per_year)
                };
                let congestion =
                    congestion_only
                        .wait(flows[i])
                        .map_err(|e| ScenarioError::Calibration {
                            level: level.id.clone(),
                            reason: e.to_string(),
                        })?;
                let offset = w_ref[i] - congestion;
                if offset < 0.0 {
                    return Err(ScenarioError::Calibration {
                        level: level.id.clone(),
                        reason: format!(
                            "reference wait {} h is below the congestion delay {congestion} h \
                             at the reference flows; no non-negative offset fits",
                            w_ref[i]
                        ),
                    });
                }
                calibrated.levels[i].zero_flow_wait = offset;
                wait_offsets.push(offset);
            }
            CalibrationMethod::CapacityFactors => {
                // Per-queue rate that produces the reference wait, from a
                // unit-capacity delay model (keeping any existing offset).
                let unit = DelayModel {
                    capacity: 1.0,
                    ..DelayModel::from_level(level, s.hours_per_year)
                };
                let required_rate = unit.inverse_wait(w_ref[i]);
                if required_rate <= 0.0 {
                    return Err(ScenarioError::Calibration {
                        level: level.id.clone(),
                        reason: format!(
                            "reference wait {} h does not exceed the zero-flow wait {} h; \
                             no positive capacity reproduces it",
                            w_ref[i], level.zero_flow_wait
                        ),
                    });
                }
                let factor = flows[i] / (required_rate * level.capacity);
                calibrated.levels[i].capacity = level.capacity * factor;
                capacity_factors[i] = factor;
                wait_offsets.push(level.zero_flow_wait);
            }
        }
    }

    calibrated.reference_waits = Some(w_ref.to_vec());
    let equilibrium = solve(&calibrated, &SolverSettings::default())?;
    let residual = equilibrium
        .waits
        .iter()
        .zip(w_ref)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let total = s.total_demand();
    let result = CalibrationResult {
        mild_share: s.classes[0].arrival_rate / total,
        capacity_factors,
        wait_offsets,
        residual,
    };
    Ok((calibrated, result))
}

/// Applies an intervention, producing a new scenario: reference utilities
/// get the additive deltas, opt-out utilities and waiting sensitivities are
/// replaced where overridden. Reference utilities are never rebuilt from a
/// new `alpha` — see the module docs.
pub fn apply_intervention(s: &Scenario, iv: &InterventionSpec) -> Result<Scenario, ScenarioError> {
    let violations = iv.validate_for(s);
    if !violations.is_empty() {
        return Err(ScenarioError::Invalid(violations));
    }
    let mut out = s.clone();
    if !iv.utility_deltas.is_empty() {
        for (row, deltas) in out.ref_utility.iter_mut().zip(&iv.utility_deltas) {
            for (u, d) in row.iter_mut().zip(deltas) {
                *u += d;
            }
        }
    }
    for (class, o) in out.classes.iter_mut().zip(&iv.opt_out_overrides) {
        if let Some(value) = o {
            class.opt_out_utility = *value;
        }
    }
    for (class, o) in out.classes.iter_mut().zip(&iv.alpha_overrides) {
        if let Some(value) = o {
            class.alpha = *value;
        }
    }
    Ok(out)
}

/// Evaluates the congestion-blind model: probabilities from the edited
/// utilities at the *fixed* reference waits, flows from those
/// probabilities, and a single wait read-off per level with no feedback.
///
/// Waiting-sensitivity overrides deliberately have no effect here: with
/// waits fixed at the reference point, the utility of a level at that point
/// is survey data independent of `alpha`. Flows at or beyond saturation
/// yield infinite waits, which count as infeasible, not as errors.
pub fn mnl_only_evaluate(s: &Scenario, iv: &InterventionSpec) -> Result<MnlOutcome, ScenarioError> {
    let alpha_free = InterventionSpec {
        alpha_overrides: Vec::new(),
        ..iv.clone()
    };
    let edited = apply_intervention(s, &alpha_free)?;
    let w_fixed = edited
        .reference_waits
        .clone()
        .unwrap_or_else(|| edited.levels.iter().map(|l| l.zero_flow_wait).collect());

    let choice = choice_matrix(&edited, &w_fixed);
    let flows = flows_from_choice(&edited, &choice);
    let waits: Vec<f64> = edited
        .levels
        .iter()
        .zip(&flows)
        .map(|(level, &x)| {
            DelayModel::from_level(level, edited.hours_per_year)
                .wait(x)
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let feasible = waits.iter().all(|&w| w <= FEASIBILITY_CAP_HOURS);
    Ok(MnlOutcome {
        waits,
        flows,
        choice,
        feasible,
    })
}

/// The case study's preference table.
pub fn case_study_attributes() -> AttributeUtilities {
    AttributeUtilities {
        classes: vec![
            ClassAttributes {
                id: "mild".into(),
                alpha: 0.232,
                opt_out_utility: 2.499,
                zero_wait_utilities: vec![0.207, 0.417, -0.259],
                skill: SkillUtilities {
                    junior: -0.277,
                    senior: 0.199,
                    expert: 0.078,
                },
                equipment: EquipmentUtilities {
                    obsolete: -0.275,
                    standard: 0.0,
                    advanced: 0.275,
                },
            },
            ClassAttributes {
                id: "severe".into(),
                alpha: 0.0995,
                opt_out_utility: -6.024,
                zero_wait_utilities: vec![-0.257, 0.089, 0.773],
                skill: SkillUtilities {
                    junior: -0.05,
                    senior: -0.089,
                    expert: 0.139,
                },
                equipment: EquipmentUtilities {
                    obsolete: -0.43,
                    standard: 0.0,
                    advanced: 0.43,
                },
            },
        ],
    }
}

/// The case study's supply table.
pub fn case_study_facilities() -> FacilityParameters {
    FacilityParameters {
        working_days_per_year: 261.0,
        hours_per_day: 8.0,
        first_visit_fraction: 0.5,
        levels: vec![
            FacilityRow {
                id: "primary".into(),
                facilities: 1009.0,
                doctors_per_facility: 6.76,
                service_rate: 10.0,
                servers: 1,
                multiplier: 3.0,
                total_visit_hours: 1.0,
                non_wait_visit_minutes: 34.0,
                skill: SkillLevel::Junior,
                equipment: EquipmentGrade::Obsolete,
            },
            FacilityRow {
                id: "secondary".into(),
                facilities: 105.0,
                doctors_per_facility: 40.8,
                service_rate: 10.0,
                servers: 1,
                multiplier: 5.0,
                total_visit_hours: 3.0,
                non_wait_visit_minutes: 88.0,
                skill: SkillLevel::Senior,
                equipment: EquipmentGrade::Standard,
            },
            FacilityRow {
                id: "tertiary".into(),
                facilities: 47.0,
                doctors_per_facility: 98.9,
                service_rate: 12.0,
                servers: 1,
                multiplier: 7.0,
                total_visit_hours: 5.0,
                non_wait_visit_minutes: 87.0,
                skill: SkillLevel::Expert,
                equipment: EquipmentGrade::Advanced,
            },
        ],
    }
}

/// Builds and calibrates the case-study scenario in one call.
pub fn case_study_scenario(
    method: CalibrationMethod,
) -> Result<(Scenario, CalibrationResult), ScenarioError> {
    let attrs = case_study_attributes();
    let supply = case_study_facilities();
    let baseline = build_baseline(&attrs, &supply, ANNUAL_DEMAND, MILD_SHARE)?;
    calibrate(&baseline, &supply.reference_waits(), method)
}

/// The named no-op intervention: applying it returns the scenario
/// unchanged. Lets the study harness and CLI treat the baseline as just
/// another intervention row.
pub fn baseline_intervention() -> InterventionSpec {
    InterventionSpec {
        name: "baseline".into(),
        utility_deltas: Vec::new(),
        opt_out_overrides: Vec::new(),
        alpha_overrides: Vec::new(),
    }
}

/// The ten built-in interventions of the case study, derived from the
/// preference and supply tables rather than hard-coded: utility deltas are
/// differences of stated-preference attribute utilities between the target
/// grade and each level's current grade.
///
/// The five core interventions: `upskill` (every physician to expert),
/// `upgrade` (all equipment to advanced), `upskill-upgrade` (both at once),
/// `health-promotion` (halves the mild class's opt-out utility to 1.250),
/// and `uniform-sensitivity` (gives the severe class the mild class's
/// waiting sensitivity). One staffing variant: `upskill-to-senior` (primary
/// care to senior rather than expert). Plus the four pairings of
/// {`upskill`, `upgrade`} with {`health-promotion`, `uniform-sensitivity`}.
pub fn builtin_interventions() -> Vec<InterventionSpec> {
    let attrs = case_study_attributes();
    let supply = case_study_facilities();
    let n_classes = attrs.classes.len();

    let skill_deltas = |target: SkillLevel| -> Vec<Vec<f64>> {
        attrs
            .classes
            .iter()
            .map(|c| {
                supply
                    .levels
                    .iter()
                    .map(|row| c.skill.value(target) - c.skill.value(row.skill))
                    .collect()
            })
            .collect()
    };
    let equipment_deltas = |target: EquipmentGrade| -> Vec<Vec<f64>> {
        attrs
            .classes
            .iter()
            .map(|c| {
                supply
                    .levels
                    .iter()
                    .map(|row| c.equipment.value(target) - c.equipment.value(row.equipment))
                    .collect()
            })
            .collect()
    };
    let sum = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        a.iter()
            .zip(b)
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
            .collect()
    };

    let upskill = skill_deltas(SkillLevel::Expert);
    let upgrade = equipment_deltas(EquipmentGrade::Advanced);
    let both = sum(&upskill, &upgrade);

    // Primary care only: senior instead of expert, levels already senior or
    // expert untouched.
    let to_senior: Vec<Vec<f64>> = attrs
        .classes
        .iter()
        .map(|c| {
            supply
                .levels
                .iter()
                .map(|row| {
                    if row.skill == SkillLevel::Junior {
                        c.skill.value(SkillLevel::Senior) - c.skill.value(SkillLevel::Junior)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let health_promotion_optout: Vec<Option<f64>> = (0..n_classes)
        .map(|k| if k == 0 { Some(1.250) } else { None })
        .collect();
    let uniform_alpha: Vec<Option<f64>> = (0..n_classes)
        .map(|k| {
            if k == 0 {
                None
            } else {
                Some(attrs.classes[0].alpha)
            }
        })
        .collect();

    let spec = |name: &str,
                deltas: Vec<Vec<f64>>,
                opt_out: Vec<Option<f64>>,
                alpha: Vec<Option<f64>>| InterventionSpec {
        name: name.into(),
        utility_deltas: deltas,
        opt_out_overrides: opt_out,
        alpha_overrides: alpha,
    };
    let no_deltas: Vec<Vec<f64>> = Vec::new();

    vec![
        spec("upskill", upskill.clone(), Vec::new(), Vec::new()),
        spec("upgrade", upgrade.clone(), Vec::new(), Vec::new()),
        spec("upskill-upgrade", both, Vec::new(), Vec::new()),
        spec(
            "health-promotion",
            no_deltas.clone(),
            health_promotion_optout.clone(),
            Vec::new(),
        ),
        spec(
            "uniform-sensitivity",
            no_deltas,
            Vec::new(),
            uniform_alpha.clone(),
        ),
        spec("upskill-to-senior", to_senior, Vec::new(), Vec::new()),
        spec(
            "upskill-health-promotion",
            upskill.clone(),
            health_promotion_optout.clone(),
            Vec::new(),
        ),
        spec(
            "upskill-uniform-sensitivity",
            upskill,
            Vec::new(),
            uniform_alpha.clone(),
        ),
        spec(
            "upgrade-health-promotion",
            upgrade.clone(),
            health_promotion_optout,
            Vec::new(),
        ),
        spec(
            "upgrade-uniform-sensitivity",
            upgrade,
            Vec::new(),
            uniform_alpha,
        ),
    ]
}

/// Loads user-defined interventions from a JSON array.
pub fn load_interventions(path: impl AsRef<Path>) -> Result<Vec<InterventionSpec>, ModelError> {
    load_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Calibrated zero-flow offsets (hours), frozen from an independent
    /// implementation of the same calibration arithmetic.
    const EXPECTED_OFFSETS: [f64; 3] = [0.2988213816852405, 0.506899285333746, 0.5876852664820871];
    /// Calibrated capacity factors under the alternative method, same
    /// provenance.
    const EXPECTED_FACTORS: [f64; 3] = [0.523888030278504, 0.8917128156082834, 0.9727643579639382];
    /// Nominal annual capacities (doctor-hours/year).
    const EXPECTED_CAPACITY: [f64; 3] = [7120956.96, 4472496.0, 4852825.2];
    /// Reference waits (hours).
    const W_REF: [f64; 3] = [0.43333333333333335, 1.5333333333333334, 3.55];
    /// Baseline choice probabilities at the reference waits.
    const P_MILD: [f64; 4] = [
        0.7756969724140614,
        0.07839514069089906,
        0.0967143650775843,
        0.04919352181745525,
    ];
    const P_SEVERE: [f64; 4] = [
        0.0005997263665651014,
        0.19165908915114713,
        0.2708914579514647,
        0.5368497265308231,
    ];
    /// Baseline annual flows (visits/year).
    const FLOWS: [f64; 3] = [22044360.68233693, 30074815.08918231, 48653206.358114704];

    fn baseline() -> Scenario {
        build_baseline(
            &case_study_attributes(),
            &case_study_facilities(),
            ANNUAL_DEMAND,
            MILD_SHARE,
        )
        .unwrap()
    }

    #[test]
    fn reference_waits_follow_from_visit_times() {
        let supply = case_study_facilities();
        let w = supply.reference_waits();
        for (a, b) in w.iter().zip(&W_REF) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn nominal_capacities_match_the_count_arithmetic() {
        let supply = case_study_facilities();
        for (i, &expected) in EXPECTED_CAPACITY.iter().enumerate() {
            assert_eq!(supply.nominal_capacity(i), expected);
        }
    }

    #[test]
    fn reference_utilities_embed_reference_waits() {
        let s = baseline();
        let attrs = case_study_attributes();
        for (k, c) in attrs.classes.iter().enumerate() {
            for (i, &w) in W_REF.iter().enumerate() {
                assert_eq!(s.ref_utility[k][i], c.zero_wait_utilities[i] + c.alpha * w);
            }
        }
        // Differences of utilities at the reference point are scale-free
        // log-odds; this one pins the unit noise scale.
        let log_odds = s.ref_utility[0][1]
            - s.classes[0].alpha * W_REF[1]
            - (s.ref_utility[0][2] - s.classes[0].alpha * W_REF[2]);
        assert_abs_diff_eq!(log_odds, 0.676, epsilon = 1e-12);
    }

    #[test]
    fn baseline_probabilities_match_the_case_values() {
        let s = baseline();
        let choice = choice_matrix(&s, &W_REF);
        for j in 0..4 {
            assert_abs_diff_eq!(choice[0][j], P_MILD[j], epsilon = 1e-12);
            assert_abs_diff_eq!(choice[1][j], P_SEVERE[j], epsilon = 1e-12);
        }
        let flows = flows_from_choice(&s, &choice);
        for i in 0..3 {
            assert_abs_diff_eq!(flows[i], FLOWS[i], epsilon = 1e-4);
        }
    }

    #[test]
    fn offset_calibration_reproduces_frozen_offsets() {
        let (s, result) = case_study_scenario(CalibrationMethod::WaitOffsets).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(result.wait_offsets[i], EXPECTED_OFFSETS[i], epsilon = 1e-12);
            assert_eq!(result.capacity_factors[i], 1.0);
            assert_eq!(s.levels[i].zero_flow_wait, result.wait_offsets[i]);
            assert_eq!(s.levels[i].capacity, EXPECTED_CAPACITY[i]);
        }
        assert_abs_diff_eq!(result.mild_share, MILD_SHARE, epsilon = 1e-15);
        assert!(result.residual <= 1e-9, "residual {}", result.residual);
        assert_eq!(s.reference_waits.as_deref().unwrap(), &W_REF);
    }

    #[test]
    fn factor_calibration_reproduces_frozen_factors() {
        let (s, result) = case_study_scenario(CalibrationMethod::CapacityFactors).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(
                result.capacity_factors[i],
                EXPECTED_FACTORS[i],
                epsilon = 1e-12
            );
            assert_eq!(result.wait_offsets[i], 0.0);
            assert_abs_diff_eq!(
                s.levels[i].capacity,
                EXPECTED_CAPACITY[i] * EXPECTED_FACTORS[i],
                epsilon = 1e-3
            );
        }
        assert!(result.residual <= 1e-9, "residual {}", result.residual);
    }

    #[test]
    fn calibrated_equilibrium_sits_at_the_reference_waits() {
        for method in [
            CalibrationMethod::WaitOffsets,
            CalibrationMethod::CapacityFactors,
        ] {
            let (s, _) = case_study_scenario(method).unwrap();
            let eq = solve(&s, &SolverSettings::default()).unwrap();
            for (i, &w) in W_REF.iter().enumerate() {
                assert!(
                    (eq.waits[i] - w).abs() <= 1e-6,
                    "{method:?} level {i}: {} vs {w}",
                    eq.waits[i]
                );
            }
        }
    }

    #[test]
    fn calibration_is_idempotent() {
        let (s1, _) = case_study_scenario(CalibrationMethod::WaitOffsets).unwrap();
        let (s2, r2) = calibrate(&s1, &W_REF, CalibrationMethod::WaitOffsets).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(
                s2.levels[i].zero_flow_wait,
                s1.levels[i].zero_flow_wait,
                epsilon = 1e-12
            );
        }
        // Re-calibrating capacities on an exactly calibrated scenario finds
        // nothing left to scale.
        let (s3, r3) = calibrate(&s1, &W_REF, CalibrationMethod::CapacityFactors).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(r3.capacity_factors[i], 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(s3.levels[i].capacity, s1.levels[i].capacity, epsilon = 1e-2);
        }
        assert!(r2.residual <= 1e-9 && r3.residual <= 1e-9);
    }

    #[test]
    fn unreachable_reference_waits_are_rejected() {
        let s = baseline();
        // A reference wait below the congestion delay at reference flows
        // cannot be fit by a non-negative offset.
        let mut w = W_REF.to_vec();
        w[2] = 0.01;
        match calibrate(&s, &w, CalibrationMethod::WaitOffsets) {
            Err(ScenarioError::Calibration { level, .. }) => assert_eq!(level, "tertiary"),
            other => panic!("expected calibration rejection, got {other:?}"),
        }
        // A reference wait of zero is below any positive congestion delay,
        // so no positive capacity factor fits either.
        let mut w = W_REF.to_vec();
        w[0] = 0.0;
        assert!(matches!(
            calibrate(&s, &w, CalibrationMethod::CapacityFactors),
            Err(ScenarioError::Calibration { .. })
        ));
    }

    #[test]
    fn builtins_are_ten_uniquely_named_specs() {
        let ivs = builtin_interventions();
        assert_eq!(ivs.len(), 10);
        let mut names: Vec<&str> = ivs.iter().map(|iv| iv.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 10, "names must be unique");
        let s = baseline();
        for iv in &ivs {
            assert!(iv.validate_for(&s).is_empty(), "{} invalid", iv.name);
        }
    }

    #[test]
    fn builtin_deltas_follow_from_the_preference_table() {
        let ivs = builtin_interventions();
        let by_name = |n: &str| ivs.iter().find(|iv| iv.name == n).unwrap();

        let upskill = by_name("upskill");
        let expected_upskill = [[0.355, -0.121, 0.0], [0.189, 0.228, 0.0]];
        for (k, row) in expected_upskill.iter().enumerate() {
            for (i, &expected) in row.iter().enumerate() {
                assert_abs_diff_eq!(upskill.utility_deltas[k][i], expected, epsilon = 1e-12);
            }
        }

        let upgrade = by_name("upgrade");
        let expected_upgrade = [[0.55, 0.275, 0.0], [0.86, 0.43, 0.0]];
        for (k, row) in expected_upgrade.iter().enumerate() {
            for (i, &expected) in row.iter().enumerate() {
                assert_abs_diff_eq!(upgrade.utility_deltas[k][i], expected, epsilon = 1e-12);
            }
        }

        let both = by_name("upskill-upgrade");
        assert_abs_diff_eq!(both.utility_deltas[0][0], 0.905, epsilon = 1e-12);
        assert_abs_diff_eq!(both.utility_deltas[1][0], 1.049, epsilon = 1e-12);
        assert_abs_diff_eq!(both.utility_deltas[0][1], 0.154, epsilon = 1e-12);
        assert_abs_diff_eq!(both.utility_deltas[1][1], 0.658, epsilon = 1e-12);

        let senior = by_name("upskill-to-senior");
        assert_abs_diff_eq!(senior.utility_deltas[0][0], 0.476, epsilon = 1e-12);
        assert_abs_diff_eq!(senior.utility_deltas[1][0], -0.039, epsilon = 1e-12);
        assert_eq!(senior.utility_deltas[0][1], 0.0);
        assert_eq!(senior.utility_deltas[0][2], 0.0);

        let hp = by_name("health-promotion");
        assert_eq!(hp.opt_out_overrides, vec![Some(1.250), None]);
        assert!(hp.utility_deltas.is_empty() && hp.alpha_overrides.is_empty());

        let us = by_name("uniform-sensitivity");
        assert_eq!(us.alpha_overrides, vec![None, Some(0.232)]);
        assert!(us.utility_deltas.is_empty() && us.opt_out_overrides.is_empty());

        for (combo, parts) in [
            ("upskill-health-promotion", ("upskill", "health-promotion")),
            (
                "upskill-uniform-sensitivity",
                ("upskill", "uniform-sensitivity"),
            ),
            ("upgrade-health-promotion", ("upgrade", "health-promotion")),
            (
                "upgrade-uniform-sensitivity",
                ("upgrade", "uniform-sensitivity"),
            ),
        ] {
            let c = by_name(combo);
            assert_eq!(c.utility_deltas, by_name(parts.0).utility_deltas);
            assert_eq!(c.opt_out_overrides, by_name(parts.1).opt_out_overrides);
            assert_eq!(c.alpha_overrides, by_name(parts.1).alpha_overrides);
        }
    }

    #[test]
    fn apply_edits_exactly_the_overridden_fields() {
        let (s, _) = case_study_scenario(CalibrationMethod::WaitOffsets).unwrap();
        let ivs = builtin_interventions();
        let hp = ivs.iter().find(|iv| iv.name == "health-promotion").unwrap();
        let edited = apply_intervention(&s, hp).unwrap();
        assert_eq!(edited.classes[0].opt_out_utility, 1.250);
        assert_eq!(
            edited.classes[1].opt_out_utility,
            s.classes[1].opt_out_utility
        );
        assert_eq!(edited.ref_utility, s.ref_utility);
        assert_eq!(edited.levels, s.levels);

        let us = ivs
            .iter()
            .find(|iv| iv.name == "uniform-sensitivity")
            .unwrap();
        let edited = apply_intervention(&s, us).unwrap();
        assert_eq!(edited.classes[1].alpha, 0.232);
        assert_eq!(edited.classes[0].alpha, s.classes[0].alpha);
        // Sensitivity replacement must not rebuild the reference utilities.
        assert_eq!(edited.ref_utility, s.ref_utility);
    }

    #[test]
    fn baseline_intervention_is_a_no_op() {
        let (s, _) = case_study_scenario(CalibrationMethod::WaitOffsets).unwrap();
        let edited = apply_intervention(&s, &baseline_intervention()).unwrap();
        assert_eq!(edited, s);
    }

    #[test]
    fn apply_then_revert_restores_the_scenario() {
        let (s, _) = case_study_scenario(CalibrationMethod::WaitOffsets).unwrap();
        for iv in builtin_interventions() {
            let edited = apply_intervention(&s, &iv).unwrap();
            let inverse = InterventionSpec {
                name: format!("revert-{}", iv.name),
                utility_deltas: iv
                    .utility_deltas
                    .iter()
                    .map(|row| row.iter().map(|d| -d).collect())
                    .collect(),
                opt_out_overrides: iv
                    .opt_out_overrides
                    .iter()
                    .enumerate()
                    .map(|(k, o)| o.map(|_| s.classes[k].opt_out_utility))
                    .collect(),
                alpha_overrides: iv
                    .alpha_overrides
                    .iter()
                    .enumerate()
                    .map(|(k, o)| o.map(|_| s.classes[k].alpha))
                    .collect(),
            };
            let restored = apply_intervention(&edited, &inverse).unwrap();
            assert_eq!(restored.classes, s.classes, "{}", iv.name);
            assert_eq!(restored.levels, s.levels, "{}", iv.name);
            // Additive edits round-trip to within one floating-point
            // rounding of each utility; bit-exactness is not guaranteed by
            // (u + d) - d.
            for k in 0..2 {
                for i in 0..3 {
                    assert_abs_diff_eq!(
                        restored.ref_utility[k][i],
                        s.ref_utility[k][i],
                        epsilon = 1e-15
                    );
                }
            }
        }
    }

    #[test]
    fn mismatched_intervention_shapes_are_rejected() {
        let s = baseline();
        let bad = InterventionSpec {
            name: "bad".into(),
            utility_deltas: vec![vec![0.1, 0.2]], // one class row, two levels
            opt_out_overrides: Vec::new(),
            alpha_overrides: vec![None, Some(-1.0)],
        };
        match apply_intervention(&s, &bad) {
            Err(ScenarioError::Invalid(v)) => assert!(v.len() >= 2),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn mnl_only_baseline_coincides_with_the_equilibrium() {
        let (s, _) = case_study_scenario(CalibrationMethod::WaitOffsets).unwrap();
        let mnl = mnl_only_evaluate(&s, &baseline_intervention()).unwrap();
        let eq = solve(&s, &SolverSettings::default()).unwrap();
        assert!(mnl.feasible);
        for k in 0..2 {
            for j in 0..4 {
                assert!((mnl.choice[k][j] - eq.choice[k][j]).abs() <= 1e-6);
            }
        }
        for i in 0..3 {
            assert!((mnl.waits[i] - eq.waits[i]).abs() <= 1e-6);
            assert!((mnl.flows[i] - eq.flows[i]).abs() <= 1e-6 * eq.flows[i]);
        }
    }

    #[test]
    fn mnl_only_matches_case_intervention_columns() {
        // Four-decimal case values for the congestion-blind model's mild
        // rows under the two staffing/equipment interventions.
        let (s, _) = case_study_scenario(CalibrationMethod::WaitOffsets).unwrap();
        let ivs = builtin_interventions();
        let by_name = |n: &str| ivs.iter().find(|iv| iv.name == n).unwrap();

        let upskill = mnl_only_evaluate(&s, by_name("upskill")).unwrap();
        for (j, expected) in [0.7587, 0.1094, 0.0838, 0.0481].iter().enumerate() {
            assert_abs_diff_eq!(upskill.choice[0][j], expected, epsilon = 5e-5);
        }

        let upgrade = mnl_only_evaluate(&s, by_name("upgrade")).unwrap();
        for (j, expected) in [0.7129, 0.1249, 0.1170, 0.0452].iter().enumerate() {
            assert_abs_diff_eq!(upgrade.choice[0][j], expected, epsilon = 5e-5);
        }
    }

    #[test]
    fn sensitivity_overrides_leave_mnl_probabilities_unchanged() {
        let (s, _) = case_study_scenario(CalibrationMethod::WaitOffsets).unwrap();
        let ivs = builtin_interventions();
        let us = ivs
            .iter()
            .find(|iv| iv.name == "uniform-sensitivity")
            .unwrap();
        let base = mnl_only_evaluate(&s, &baseline_intervention()).unwrap();
        let shifted = mnl_only_evaluate(&s, us).unwrap();
        assert_eq!(base.choice, shifted.choice);
        assert_eq!(base.waits, shifted.waits);
    }

    #[test]
    fn positive_delta_strictly_raises_the_edited_probability() {
        let (s, _) = case_study_scenario(CalibrationMethod::WaitOffsets).unwrap();
        let base = mnl_only_evaluate(&s, &baseline_intervention()).unwrap();
        let iv = InterventionSpec {
            name: "bump-secondary-mild".into(),
            utility_deltas: vec![vec![0.0, 0.3, 0.0], vec![0.0; 3]],
            opt_out_overrides: Vec::new(),
            alpha_overrides: Vec::new(),
        };
        let bumped = mnl_only_evaluate(&s, &iv).unwrap();
        assert!(bumped.choice[0][2] > base.choice[0][2]);
        // All rival alternatives of that class lose share.
        for j in [0usize, 1, 3] {
            assert!(bumped.choice[0][j] < base.choice[0][j]);
        }
        // The untouched class is unaffected.
        assert_eq!(bumped.choice[1], base.choice[1]);
    }

    #[test]
    fn saturating_flows_yield_infinite_waits_not_errors() {
        let (s, _) = case_study_scenario(CalibrationMethod::WaitOffsets).unwrap();
        let iv = InterventionSpec {
            name: "flood-primary".into(),
            utility_deltas: vec![vec![30.0, 0.0, 0.0], vec![30.0, 0.0, 0.0]],
            opt_out_overrides: Vec::new(),
            alpha_overrides: Vec::new(),
        };
        let out = mnl_only_evaluate(&s, &iv).unwrap();
        assert!(out.waits[0].is_infinite());
        assert!(!out.feasible);
    }

    #[test]
    fn effects_coding_violations_are_reported() {
        let mut attrs = case_study_attributes();
        attrs.classes[0].equipment.standard = 0.3;
        let v = attrs.validate();
        assert!(v.iter().any(|x| x.rule.contains("effects coding")));
        assert!(matches!(
            build_baseline(&attrs, &case_study_facilities(), ANNUAL_DEMAND, MILD_SHARE),
            Err(ScenarioError::Invalid(_))
        ));
    }

    #[test]
    fn case_skill_utilities_are_also_effects_coded() {
        // The survey's skill utilities happen to be centered as well; this
        // documents the data property without enforcing it on user tables.
        for c in case_study_attributes().classes {
            assert_abs_diff_eq!(
                c.skill.junior + c.skill.senior + c.skill.expert,
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn tables_round_trip_through_json() {
        let attrs = case_study_attributes();
        let text = serde_json::to_string(&attrs).unwrap();
        let back: AttributeUtilities = serde_json::from_str(&text).unwrap();
        assert_eq!(back, attrs);

        let supply = case_study_facilities();
        let text = serde_json::to_string(&supply).unwrap();
        let back: FacilityParameters = serde_json::from_str(&text).unwrap();
        assert_eq!(back, supply);

        let ivs = builtin_interventions();
        let text = serde_json::to_string(&ivs).unwrap();
        let back: Vec<InterventionSpec> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ivs);
    }
}
