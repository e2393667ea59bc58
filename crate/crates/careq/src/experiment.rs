//! The sensitivity-analysis harness: paired perturbation sampling, study
//! execution over both models, sign and nonzero significance tests, and
//! report rendering.
//!
//! # Design
//!
//! A study draws `n` perturbation samples, each scaling every level's
//! waiting-time multiplier (demand-side uncertainty) and capacity
//! (supply-side uncertainty) by independent factors uniform on
//! `[0.9, 1.1]`. Both models — the full equilibrium and the
//! congestion-blind comparison — are evaluated on the *same* perturbed
//! scenario, giving paired outcomes whose differences feed two tests per
//! outcome variable:
//!
//! * **Sign test**: counts strictly positive and strictly negative
//!   differences. At n = 1000 the historical thresholds are applied
//!   verbatim: `++`/`--` at ≥ 537 positives (≤ 462), `+`/`-` at ≥ 526
//!   (≤ 473). Note the verbatim pairs are asymmetric (526 vs the exact
//!   complement 527) and sit just *outside* the exact binomial α = 0.05 /
//!   0.01 tails; they are reproduced as stated, not corrected. For any
//!   other n the thresholds come from the exact binomial distribution at
//!   the same α levels.
//! * **Nonzero test**: flags a variable when at most 2.5% of the paired
//!   differences fall on the rarer side of zero, i.e. zero lies outside the
//!   central 95% of the empirical difference distribution.
//!
//! An instance is *infeasible* for a model when any of that model's waits
//! exceeds the 10-hour cap (or is infinite); infeasible instances are
//! excluded from that model's means and from the paired tests but stay
//! counted. Equilibrium solver failures are likewise counted and excluded.
//!
//! # Reproducibility
//!
//! Sampling uses the ChaCha8 counter-based generator: instance `i` draws
//! from stream `i` of the master-seeded generator, so the sample list is
//! identical regardless of evaluation order, platform, or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};
use std::fmt;

use crate::equilibrium::{solve, SolverSettings};
use crate::model::Scenario;
use crate::scenario::{apply_intervention, mnl_only_evaluate, InterventionSpec, ScenarioError};

/// Half-width of the uniform perturbation: factors lie in `[0.9, 1.1]`.
const PERTURBATION_HALF_WIDTH: f64 = 0.1;

/// Significance levels of the sign test's two tiers.
const ALPHA_WEAK: f64 = 0.05;
const ALPHA_STRONG: f64 = 0.01;

/// One paired-perturbation instance: the factors applied to every level's
/// waiting-time multiplier and capacity. Reproducible from
/// `(master_seed, index)` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSample {
    /// Seed of the whole study.
    pub master_seed: u64,
    /// Index of this instance within the study (also its RNG stream).
    pub index: u64,
    /// Per-level factors on the waiting-time multiplier, in `[0.9, 1.1]`.
    pub multiplier_factors: Vec<f64>,
    /// Per-level factors on capacity, in `[0.9, 1.1]`.
    pub supply_factors: Vec<f64>,
}

/// Draws `n` perturbation samples for `n_levels` facility levels.
///
/// Instance `i` uses stream `i` of a ChaCha8 generator seeded with
/// `master_seed` and draws its multiplier factors first, then its supply
/// factors, each independent uniform on `[0.9, 1.1]`.
pub fn sample_perturbations(
    n: usize,
    master_seed: u64,
    n_levels: usize,
) -> Vec<PerturbationSample> {
    assert!(n >= 1, "a study needs at least one instance");
    assert!(n_levels >= 1, "a study needs at least one level");
    (0..n as u64)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(index);
            let lo = 1.0 - PERTURBATION_HALF_WIDTH;
            let hi = 1.0 + PERTURBATION_HALF_WIDTH;
            let multiplier_factors = (0..n_levels).map(|_| rng.random_range(lo..hi)).collect();
            let supply_factors = (0..n_levels).map(|_| rng.random_range(lo..hi)).collect();
            PerturbationSample {
                master_seed,
                index,
                multiplier_factors,
                supply_factors,
            }
        })
        .collect()
}

/// Applies a perturbation sample: scales each level's waiting-time
/// multiplier and capacity by the sample's factors. Everything else —
/// utilities, demand, service rates, zero-flow waits — is untouched.
pub fn perturb_scenario(s: &Scenario, sample: &PerturbationSample) -> Scenario {
    assert_eq!(
        sample.multiplier_factors.len(),
        s.levels.len(),
        "one multiplier factor per level"
    );
    let mut out = s.clone();
    for (i, level) in out.levels.iter_mut().enumerate() {
        level.multiplier *= sample.multiplier_factors[i];
        level.capacity *= sample.supply_factors[i];
    }
    out
}

/// Both models' outcome values on one perturbed instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedOutcome {
    /// Instance index (RNG stream).
    pub index: u64,
    /// Congestion-blind values per outcome variable; wait slots may be
    /// infinite.
    pub mnl_values: Vec<f64>,
    /// Equilibrium values per outcome variable; empty when the solver
    /// failed on this instance.
    pub eq_values: Vec<f64>,
    /// `equilibrium − congestion-blind` per variable; present only when
    /// both models are feasible on this instance.
    pub differences: Option<Vec<f64>>,
    /// Congestion-blind model within the 10-hour cap.
    pub feasible_mnl: bool,
    /// Equilibrium solved and within the 10-hour cap.
    pub feasible_eq: bool,
    /// The equilibrium solver failed on this instance.
    pub eq_failed: bool,
}

/// A completed study: label layout plus one outcome per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcomes {
    /// Outcome-variable labels, `P(..)` rows then `W(..)` rows.
    pub labels: Vec<String>,
    /// One record per instance, in sample order.
    pub outcomes: Vec<PairedOutcome>,
}

/// Outcome-variable labels of a scenario: per class an opt-out probability
/// (when the opt-out participates) and one probability per level, then one
/// wait per level. Classes are tagged by the initial of their id when the
/// initials are distinct, by the full id otherwise.
pub fn variable_labels(s: &Scenario) -> Vec<String> {
    let initials: Vec<String> = s
        .classes
        .iter()
        .map(|c| {
            c.id.chars()
                .next()
                .map(|ch| ch.to_uppercase().to_string())
                .unwrap_or_default()
        })
        .collect();
    let mut unique = initials.clone();
    unique.sort();
    unique.dedup();
    let tags: Vec<String> = if unique.len() == s.classes.len() {
        initials
    } else {
        s.classes.iter().map(|c| c.id.clone()).collect()
    };

    let mut labels = Vec::new();
    for tag in &tags {
        if s.opt_out_enabled {
            labels.push(format!("P(OO|{tag})"));
        }
        for i in 1..=s.levels.len() {
            labels.push(format!("P({i}|{tag})"));
        }
    }
    for i in 1..=s.levels.len() {
        labels.push(format!("W({i})"));
    }
    labels
}

/// Flattens a model's choice matrix and waits into the label order of
/// [`variable_labels`].
fn outcome_values(choice: &[Vec<f64>], waits: &[f64], opt_out_enabled: bool) -> Vec<f64> {
    let mut values = Vec::new();
    for row in choice {
        let start = usize::from(!opt_out_enabled);
        values.extend_from_slice(&row[start..]);
    }
    values.extend_from_slice(waits);
    values
}

/// Runs both models over every perturbed instance of a study.
///
/// Each instance perturbs the scenario once and feeds the identical
/// perturbed data to both models. Equilibrium solver failures are recorded
/// on the outcome and the run continues.
pub fn run_paired_study(
    s: &Scenario,
    iv: &InterventionSpec,
    samples: &[PerturbationSample],
) -> Result<StudyOutcomes, ScenarioError> {
    // Validates the intervention once; also the equilibrium model's edited
    // scenario, which commutes with perturbation (they touch disjoint
    // fields).
    let edited = apply_intervention(s, iv)?;
    let labels = variable_labels(s);
    let settings = SolverSettings::default();

    let outcomes = samples
        .iter()
        .map(|sample| {
            let mnl = mnl_only_evaluate(&perturb_scenario(s, sample), iv)
                .expect("intervention validated");
            let mnl_values = outcome_values(&mnl.choice, &mnl.waits, s.opt_out_enabled);

            let (eq_values, feasible_eq, eq_failed) =
                match solve(&perturb_scenario(&edited, sample), &settings) {
                    Ok(eq) => (
                        outcome_values(&eq.choice, &eq.waits, s.opt_out_enabled),
                        eq.feasible,
                        false,
                    ),
                    Err(_) => (Vec::new(), false, true),
                };

            let differences = if mnl.feasible && feasible_eq {
                Some(
                    eq_values
                        .iter()
                        .zip(&mnl_values)
                        .map(|(e, m)| e - m)
                        .collect(),
                )
            } else {
                None
            };
            PairedOutcome {
                index: sample.index,
                mnl_values,
                eq_values,
                differences,
                feasible_mnl: mnl.feasible,
                feasible_eq,
                eq_failed,
            }
        })
        .collect();

    Ok(StudyOutcomes { labels, outcomes })
}

/// Verdict of the sign test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignVerdict {
    /// Positives significant at the 0.01 level.
    StrongPositive,
    /// Positives significant at the 0.05 level only.
    Positive,
    /// Negatives significant at the 0.05 level only.
    Negative,
    /// Negatives significant at the 0.01 level.
    StrongNegative,
    /// No significant imbalance.
    None,
}

impl fmt::Display for SignVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = match self {
            SignVerdict::StrongPositive => "++",
            SignVerdict::Positive => "+",
            SignVerdict::Negative => "-",
            SignVerdict::StrongNegative => "--",
            SignVerdict::None => "",
        };
        f.write_str(mark)
    }
}

/// Positive-count thresholds `(t_weak, t_strong)` of the sign test at
/// sample size `n`.
///
/// At n = 1000 the historical values (526, 537) are applied verbatim even
/// though the exact binomial tails there are (527, 538); see the module
/// docs. Every other n uses the smallest `t` with
/// `P(X ≥ t | X ~ Bin(n, ½)) < α`. A returned threshold of `n + 1` means
/// the tier is unreachable at that sample size.
pub fn sign_thresholds(n: usize) -> (usize, usize) {
    if n == 1000 {
        return (526, 537);
    }
    exact_thresholds(n)
}

/// Smallest counts `t` with `P(X ≥ t | X ~ Bin(n, ½)) < α` at the weak and
/// strong levels, without the n = 1000 special case.
fn exact_thresholds(n: usize) -> (usize, usize) {
    let binomial =
        Binomial::new(0.5, n as u64).expect("n >= 1 and p = 1/2 are always a valid binomial");
    // P(X >= t) = sf(t - 1); scan upward from the mean.
    let mut weak = None;
    let mut strong = None;
    for t in (n / 2)..=n {
        let tail = if t == 0 {
            1.0
        } else {
            binomial.sf(t as u64 - 1)
        };
        if weak.is_none() && tail < ALPHA_WEAK {
            weak = Some(t);
        }
        if tail < ALPHA_STRONG {
            strong = Some(t);
            break;
        }
    }
    (weak.unwrap_or(n + 1), strong.unwrap_or(n + 1))
}

/// Sign test over paired differences: counts strict positives and strict
/// negatives (exact zeros count to neither side) and grades the imbalance.
///
/// The positive side uses [`sign_thresholds`]; the negative side applies the
/// exact thresholds to the negatives count, which reproduces the historical
/// "at most 473 / at most 462" cutoffs at n = 1000 whenever no differences
/// tie at zero (negatives ≥ 527 ⟺ positives ≤ 473 there) while leaving
/// exact zeros out of both tallies.
pub fn sign_test(differences: &[f64]) -> SignVerdict {
    if differences.is_empty() {
        return SignVerdict::None;
    }
    let n = differences.len();
    let positives = differences.iter().filter(|d| **d > 0.0).count();
    let negatives = differences.iter().filter(|d| **d < 0.0).count();
    let (pos_weak, pos_strong) = sign_thresholds(n);
    let (neg_weak, neg_strong) = exact_thresholds(n);
    if positives >= pos_strong {
        SignVerdict::StrongPositive
    } else if negatives >= neg_strong {
        SignVerdict::StrongNegative
    } else if positives >= pos_weak {
        SignVerdict::Positive
    } else if negatives >= neg_weak {
        SignVerdict::Negative
    } else {
        SignVerdict::None
    }
}

/// Nonzero test: flags a variable when the rarer side of zero holds at most
/// 2.5% of the paired differences (⌊0.025 n⌋ of them), i.e. zero lies
/// outside the central 95% of the empirical distribution.
pub fn nonzero_test(differences: &[f64]) -> bool {
    if differences.is_empty() {
        return false;
    }
    let n = differences.len();
    let below = differences.iter().filter(|d| **d < 0.0).count();
    let above = differences.iter().filter(|d| **d > 0.0).count();
    let limit = (0.025 * n as f64).floor() as usize;
    below.min(above) <= limit
}

/// One outcome variable's row of a study report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// Variable label, e.g. `P(OO|M)` or `W(2)`.
    pub label: String,
    /// Congestion-blind value on the unperturbed scenario.
    pub unperturbed_mnl: f64,
    /// Equilibrium value on the unperturbed scenario.
    pub unperturbed_eq: f64,
    /// Mean over the congestion-blind model's feasible instances (NaN when
    /// none).
    pub mean_mnl: f64,
    /// Mean over the equilibrium model's feasible instances (NaN when
    /// none).
    pub mean_eq: f64,
    /// Sign-test verdict over the paired differences.
    pub sign: SignVerdict,
    /// Nonzero-test flag over the paired differences.
    pub nonzero: bool,
    /// Number of instances feasible for both models (the tests' sample
    /// size).
    pub paired_count: usize,
}

/// A rendered-ready study report.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    /// Name of the studied intervention.
    pub intervention: String,
    /// Number of instances drawn.
    pub n_instances: usize,
    /// Instances feasible for the congestion-blind model.
    pub mnl_feasible: usize,
    /// Instances feasible for the equilibrium model.
    pub eq_feasible: usize,
    /// Instances where the equilibrium solver failed.
    pub eq_failures: usize,
    /// One row per outcome variable.
    pub rows: Vec<ReportRow>,
}

/// Aggregates a completed study into a report: unperturbed columns from the
/// unperturbed scenario, means over each model's own feasible instances,
/// and the two significance tests over the paired differences.
pub fn build_report(
    s: &Scenario,
    iv: &InterventionSpec,
    study: &StudyOutcomes,
) -> Result<StudyReport, ScenarioError> {
    let unperturbed_mnl = mnl_only_evaluate(s, iv)?;
    let unperturbed_eq = solve(&apply_intervention(s, iv)?, &SolverSettings::default())?;
    let mnl_base = outcome_values(
        &unperturbed_mnl.choice,
        &unperturbed_mnl.waits,
        s.opt_out_enabled,
    );
    let eq_base = outcome_values(
        &unperturbed_eq.choice,
        &unperturbed_eq.waits,
        s.opt_out_enabled,
    );

    let n = study.outcomes.len();
    let mnl_feasible = study.outcomes.iter().filter(|o| o.feasible_mnl).count();
    let eq_feasible = study.outcomes.iter().filter(|o| o.feasible_eq).count();
    let eq_failures = study.outcomes.iter().filter(|o| o.eq_failed).count();

    let rows = study
        .labels
        .iter()
        .enumerate()
        .map(|(v, label)| {
            let mean_over = |feasible: fn(&PairedOutcome) -> bool,
                             values: fn(&PairedOutcome) -> &Vec<f64>,
                             count: usize| {
                if count == 0 {
                    f64::NAN
                } else {
                    study
                        .outcomes
                        .iter()
                        .filter(|o| feasible(o))
                        .map(|o| values(o)[v])
                        .sum::<f64>()
                        / count as f64
                }
            };
            let mean_mnl = mean_over(|o| o.feasible_mnl, |o| &o.mnl_values, mnl_feasible);
            let mean_eq = mean_over(|o| o.feasible_eq, |o| &o.eq_values, eq_feasible);
            let differences: Vec<f64> = study
                .outcomes
                .iter()
                .filter_map(|o| o.differences.as_ref().map(|d| d[v]))
                .collect();
            ReportRow {
                label: label.clone(),
                unperturbed_mnl: mnl_base[v],
                unperturbed_eq: eq_base[v],
                mean_mnl,
                mean_eq,
                sign: sign_test(&differences),
                nonzero: nonzero_test(&differences),
                paired_count: differences.len(),
            }
        })
        .collect();

    Ok(StudyReport {
        intervention: iv.name.clone(),
        n_instances: n,
        mnl_feasible,
        eq_feasible,
        eq_failures,
        rows,
    })
}

/// Column header of the CSV report format.
const CSV_HEADER: &str = "intervention,variable,unperturbed_mnl,unperturbed_eq,mean_mnl,\
                          mean_eq,sign,nonzero,paired_count,mnl_feasible,eq_feasible,\
                          eq_failures,instances";

/// Renders a report as CSV at full floating-point precision. The study name
/// and feasibility counts repeat on every row to keep the file rectangular
/// and self-contained: [`parse_csv`] reconstructs the full report from it.
pub fn render_csv(report: &StudyReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            report.intervention,
            row.label,
            row.unperturbed_mnl,
            row.unperturbed_eq,
            row.mean_mnl,
            row.mean_eq,
            row.sign,
            if row.nonzero { "x" } else { "" },
            row.paired_count,
            report.mnl_feasible,
            report.eq_feasible,
            report.eq_failures,
            report.n_instances,
        ));
    }
    out
}

/// A saved report failed to parse back.
#[derive(Debug, thiserror::Error)]
#[error("invalid report file: {0}")]
pub struct ReportParseError(pub String);

/// Parses a CSV produced by [`render_csv`] back into a [`StudyReport`].
/// Inverse of `render_csv` up to floating-point round-tripping, which the
/// full-precision `{}` formatting makes exact.
pub fn parse_csv(text: &str) -> Result<StudyReport, ReportParseError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| ReportParseError("empty file".into()))?;
    if header != CSV_HEADER {
        return Err(ReportParseError(format!(
            "unexpected header {header:?}; expected {CSV_HEADER:?}"
        )));
    }

    let mut intervention: Option<String> = None;
    let mut counts: Option<(usize, usize, usize, usize)> = None;
    let mut rows = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(ReportParseError(format!(
                "line {}: expected 13 fields, got {}",
                line_no + 2,
                fields.len()
            )));
        }
        let number = |field: &str, name: &str| -> Result<f64, ReportParseError> {
            field.parse().map_err(|_| {
                ReportParseError(format!("line {}: bad {name} {field:?}", line_no + 2))
            })
        };
        let count = |field: &str, name: &str| -> Result<usize, ReportParseError> {
            field.parse().map_err(|_| {
                ReportParseError(format!("line {}: bad {name} {field:?}", line_no + 2))
            })
        };
        let sign = match fields[6] {
            "++" => SignVerdict::StrongPositive,
            "+" => SignVerdict::Positive,
            "-" => SignVerdict::Negative,
            "--" => SignVerdict::StrongNegative,
            "" => SignVerdict::None,
            other => {
                return Err(ReportParseError(format!(
                    "line {}: bad sign verdict {other:?}",
                    line_no + 2
                )))
            }
        };
        let nonzero = match fields[7] {
            "x" => true,
            "" => false,
            other => {
                return Err(ReportParseError(format!(
                    "line {}: bad nonzero flag {other:?}",
                    line_no + 2
                )))
            }
        };
        match &intervention {
            None => intervention = Some(fields[0].to_string()),
            Some(name) if name != fields[0] => {
                return Err(ReportParseError(format!(
                    "line {}: mixed interventions {name:?} and {:?}",
                    line_no + 2,
                    fields[0]
                )))
            }
            Some(_) => {}
        }
        let these_counts = (
            count(fields[9], "mnl_feasible")?,
            count(fields[10], "eq_feasible")?,
            count(fields[11], "eq_failures")?,
            count(fields[12], "instances")?,
        );
        match &counts {
            None => counts = Some(these_counts),
            Some(existing) if *existing != these_counts => {
                return Err(ReportParseError(format!(
                    "line {}: inconsistent feasibility counts",
                    line_no + 2
                )))
            }
            Some(_) => {}
        }
        rows.push(ReportRow {
            label: fields[1].to_string(),
            unperturbed_mnl: number(fields[2], "unperturbed_mnl")?,
            unperturbed_eq: number(fields[3], "unperturbed_eq")?,
            mean_mnl: number(fields[4], "mean_mnl")?,
            mean_eq: number(fields[5], "mean_eq")?,
            sign,
            nonzero,
            paired_count: count(fields[8], "paired_count")?,
        });
    }
    let intervention = intervention.ok_or_else(|| ReportParseError("no data rows".into()))?;
    let (mnl_feasible, eq_feasible, eq_failures, n_instances) = counts.expect("rows imply counts");
    Ok(StudyReport {
        intervention,
        n_instances,
        mnl_feasible,
        eq_feasible,
        eq_failures,
        rows,
    })
}

/// Renders a report as an aligned text table: probabilities to four
/// decimals, waits to two, with a feasibility footer.
pub fn render_table(report: &StudyReport) -> String {
    let fmt_value = |label: &str, x: f64| -> String {
        if x.is_nan() {
            "-".to_string()
        } else if label.starts_with('W') {
            format!("{x:.2}")
        } else {
            format!("{x:.4}")
        }
    };
    let header = [
        "variable",
        "mnl",
        "equilibrium",
        "mean mnl",
        "mean eq",
        "sign",
        "nonzero",
    ];
    let mut cells: Vec<[String; 7]> = Vec::with_capacity(report.rows.len());
    for row in &report.rows {
        cells.push([
            row.label.clone(),
            fmt_value(&row.label, row.unperturbed_mnl),
            fmt_value(&row.label, row.unperturbed_eq),
            fmt_value(&row.label, row.mean_mnl),
            fmt_value(&row.label, row.mean_eq),
            row.sign.to_string(),
            if row.nonzero { "x" } else { "" }.to_string(),
        ]);
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let render_line = |cols: &[String]| -> String {
        let mut line = String::new();
        for (j, cell) in cols.iter().enumerate() {
            if j > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:>width$}", width = widths[j]));
        }
        line.push('\n');
        line
    };
    let mut out = format!("study: {}\n", report.intervention);
    out.push_str(&render_line(
        &header.iter().map(|h| h.to_string()).collect::<Vec<_>>(),
    ));
    for row in &cells {
        out.push_str(&render_line(row));
    }
    out.push_str(&format!(
        "feasible: mnl {}/{n}, equilibrium {}/{n}, solver failures {}\n",
        report.mnl_feasible,
        report.eq_feasible,
        report.eq_failures,
        n = report.n_instances,
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{
        baseline_intervention, builtin_interventions, case_study_scenario, CalibrationMethod,
    };
    use approx::assert_abs_diff_eq;

    fn case() -> Scenario {
        case_study_scenario(CalibrationMethod::WaitOffsets)
            .unwrap()
            .0
    }

    #[test]
    fn samples_stay_in_bounds_and_reproduce() {
        let samples = sample_perturbations(1000, 42, 3);
        assert_eq!(samples.len(), 1000);
        let mut sums = [0.0f64; 6];
        for s in &samples {
            for (i, &f) in s
                .multiplier_factors
                .iter()
                .chain(&s.supply_factors)
                .enumerate()
            {
                assert!((0.9..1.1).contains(&f), "factor {f} out of bounds");
                sums[i] += f;
            }
        }
        // CLT: each factor's mean within 3σ/√1000 ≈ 0.0055 of 1.
        for sum in sums {
            assert!((sum / 1000.0 - 1.0).abs() < 0.006);
        }
        assert_eq!(samples, sample_perturbations(1000, 42, 3));
        assert_ne!(samples, sample_perturbations(1000, 43, 3));
    }

    #[test]
    fn single_sample_has_one_factor_pair_per_level() {
        let samples = sample_perturbations(1, 7, 3);
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].multiplier_factors.len(), 3);
        assert_eq!(samples[0].supply_factors.len(), 3);
    }

    #[test]
    fn sample_order_does_not_matter() {
        // Stream-per-instance sampling: instance i's factors are
        // independent of how many instances are drawn.
        let long = sample_perturbations(100, 9, 3);
        let short = sample_perturbations(10, 9, 3);
        assert_eq!(&long[..10], &short[..]);
    }

    #[test]
    fn perturbation_scales_only_multipliers_and_capacities() {
        let s = case();
        let sample = &sample_perturbations(1, 5, 3)[0];
        let p = perturb_scenario(&s, sample);
        for i in 0..3 {
            assert_abs_diff_eq!(
                p.levels[i].multiplier,
                s.levels[i].multiplier * sample.multiplier_factors[i],
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                p.levels[i].capacity,
                s.levels[i].capacity * sample.supply_factors[i],
                epsilon = 1e-3
            );
            assert_eq!(p.levels[i].zero_flow_wait, s.levels[i].zero_flow_wait);
            assert_eq!(p.levels[i].service_rate, s.levels[i].service_rate);
        }
        assert_eq!(p.classes, s.classes);
        assert_eq!(p.ref_utility, s.ref_utility);
        // Pairing guarantee: perturbation is a pure function of the sample.
        assert_eq!(p, perturb_scenario(&s, sample));
    }

    #[test]
    fn case_labels_follow_the_layout() {
        let labels = variable_labels(&case());
        assert_eq!(
            labels,
            vec![
                "P(OO|M)", "P(1|M)", "P(2|M)", "P(3|M)", "P(OO|S)", "P(1|S)", "P(2|S)", "P(3|S)",
                "W(1)", "W(2)", "W(3)"
            ]
        );
    }

    #[test]
    fn verbatim_thresholds_at_n_1000_exact_elsewhere() {
        assert_eq!(sign_thresholds(1000), (526, 537));
        // Exact binomial thresholds, frozen from an independent
        // computation of the Bin(n, 1/2) tails.
        assert_eq!(sign_thresholds(571), (306, 314));
        assert_eq!(sign_thresholds(739), (393, 402));
        assert_eq!(sign_thresholds(100), (59, 63));
        assert_eq!(sign_thresholds(10), (9, 10));
    }

    #[test]
    fn the_verbatim_thresholds_sit_outside_the_exact_tails() {
        // Documents why n = 1000 is special-cased: the historical
        // thresholds 526/537 have exact tails slightly above their α
        // levels; the exact thresholds would be 527/538.
        let binomial = Binomial::new(0.5, 1000).unwrap();
        let tail = |t: u64| binomial.sf(t - 1);
        assert_abs_diff_eq!(tail(526), 0.05337477101715999, epsilon = 1e-12);
        assert_abs_diff_eq!(tail(537), 0.010463555303042356, epsilon = 1e-12);
        assert_abs_diff_eq!(tail(527), 0.046843645737748296, epsilon = 1e-12);
        assert_abs_diff_eq!(tail(538), 0.008831115667749261, epsilon = 1e-12);
        assert!(tail(526) >= 0.05 && tail(527) < 0.05);
        assert!(tail(537) >= 0.01 && tail(538) < 0.01);
    }

    fn signed_vector(positives: usize, negatives: usize, zeros: usize) -> Vec<f64> {
        let mut v = vec![1.0; positives];
        v.extend(vec![-1.0; negatives]);
        v.extend(vec![0.0; zeros]);
        v
    }

    #[test]
    fn sign_test_grades_the_documented_examples() {
        assert_eq!(
            sign_test(&signed_vector(600, 400, 0)),
            SignVerdict::StrongPositive
        );
        assert_eq!(
            sign_test(&signed_vector(530, 470, 0)),
            SignVerdict::Positive
        );
        assert_eq!(sign_test(&signed_vector(500, 500, 0)), SignVerdict::None);
        assert_eq!(
            sign_test(&signed_vector(470, 530, 0)),
            SignVerdict::Negative
        );
        assert_eq!(
            sign_test(&signed_vector(430, 570, 0)),
            SignVerdict::StrongNegative
        );
        // Boundary cases of the verbatim thresholds.
        assert_eq!(
            sign_test(&signed_vector(526, 474, 0)),
            SignVerdict::Positive
        );
        assert_eq!(
            sign_test(&signed_vector(537, 463, 0)),
            SignVerdict::StrongPositive
        );
        assert_eq!(
            sign_test(&signed_vector(473, 527, 0)),
            SignVerdict::Negative
        );
        assert_eq!(
            sign_test(&signed_vector(462, 538, 0)),
            SignVerdict::StrongNegative
        );
        assert_eq!(sign_test(&signed_vector(525, 475, 0)), SignVerdict::None);
        assert_eq!(sign_test(&signed_vector(474, 526, 0)), SignVerdict::None);
    }

    #[test]
    fn exact_zeros_count_toward_neither_side() {
        // 600 positives of 1000 would be ++, but zeros dilute nothing:
        // the verdict works on counts, not proportions of nonzero.
        assert_eq!(
            sign_test(&signed_vector(600, 0, 400)),
            SignVerdict::StrongPositive
        );
        assert_eq!(sign_test(&signed_vector(0, 0, 1000)), SignVerdict::None);
    }

    #[test]
    fn nonzero_test_flags_the_documented_examples() {
        assert!(nonzero_test(&signed_vector(990, 10, 0)));
        assert!(!nonzero_test(&signed_vector(974, 26, 0)));
        assert!(nonzero_test(&signed_vector(1000, 0, 0)));
        assert!(nonzero_test(&signed_vector(25, 975, 0)));
    }

    #[test]
    fn baseline_study_is_fully_feasible_and_accounted() {
        let s = case();
        let iv = baseline_intervention();
        let samples = sample_perturbations(16, 42, 3);
        let study = run_paired_study(&s, &iv, &samples).unwrap();
        assert_eq!(study.outcomes.len(), 16);
        for o in &study.outcomes {
            assert!(o.feasible_mnl && o.feasible_eq && !o.eq_failed);
            assert_eq!(o.mnl_values.len(), 11);
            assert_eq!(o.eq_values.len(), 11);
            assert!(o.differences.is_some());
        }
        let report = build_report(&s, &iv, &study).unwrap();
        assert_eq!(report.mnl_feasible, 16);
        assert_eq!(report.eq_feasible, 16);
        assert_eq!(report.eq_failures, 0);
        assert_eq!(report.rows.len(), 11);
        for row in &report.rows {
            assert_eq!(row.paired_count, 16);
        }
    }

    #[test]
    fn exclusion_accounting_adds_up_under_stress() {
        // Health promotion floods the secondary/tertiary queues in the
        // congestion-blind model, so some perturbed instances break the
        // 10-hour cap there while the equilibrium stays feasible.
        let s = case();
        let ivs = builtin_interventions();
        let hp = ivs.iter().find(|iv| iv.name == "health-promotion").unwrap();
        let samples = sample_perturbations(60, 42, 3);
        let study = run_paired_study(&s, hp, &samples).unwrap();
        let report = build_report(&s, hp, &study).unwrap();
        let mnl_infeasible = study.outcomes.iter().filter(|o| !o.feasible_mnl).count();
        assert_eq!(report.mnl_feasible + mnl_infeasible, 60);
        let eq_infeasible = study
            .outcomes
            .iter()
            .filter(|o| !o.feasible_eq && !o.eq_failed)
            .count();
        assert_eq!(report.eq_feasible + eq_infeasible + report.eq_failures, 60);
        assert!(report.mnl_feasible < 60, "stress case should exclude some");
        assert_eq!(report.eq_failures, 0);
        for row in &report.rows {
            assert_eq!(
                row.paired_count,
                study
                    .outcomes
                    .iter()
                    .filter(|o| o.differences.is_some())
                    .count()
            );
        }
    }

    #[test]
    fn degenerate_all_ones_sample_reproduces_the_unperturbed_columns() {
        let s = case();
        let iv = baseline_intervention();
        let sample = PerturbationSample {
            master_seed: 0,
            index: 0,
            multiplier_factors: vec![1.0; 3],
            supply_factors: vec![1.0; 3],
        };
        let study = run_paired_study(&s, &iv, &[sample]).unwrap();
        let report = build_report(&s, &iv, &study).unwrap();
        let diffs = study.outcomes[0].differences.as_ref().unwrap();
        for (v, row) in report.rows.iter().enumerate() {
            assert_eq!(diffs[v], row.unperturbed_eq - row.unperturbed_mnl);
            assert_eq!(row.mean_mnl, row.unperturbed_mnl);
            assert_eq!(row.mean_eq, row.unperturbed_eq);
        }
    }

    #[test]
    fn reports_are_deterministic_given_the_seed() {
        let s = case();
        let iv = baseline_intervention();
        let run = || {
            let samples = sample_perturbations(12, 7, 3);
            let study = run_paired_study(&s, &iv, &samples).unwrap();
            build_report(&s, &iv, &study).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert_eq!(render_csv(&a), render_csv(&b));
    }

    #[test]
    fn empty_study_reports_zero_counts() {
        let s = case();
        let iv = baseline_intervention();
        let study = run_paired_study(&s, &iv, &[]).unwrap();
        let report = build_report(&s, &iv, &study).unwrap();
        assert_eq!(report.n_instances, 0);
        assert_eq!(report.rows.len(), 11);
        assert_eq!(
            (report.mnl_feasible, report.eq_feasible, report.eq_failures),
            (0, 0, 0)
        );
        for row in &report.rows {
            assert_eq!(row.sign, SignVerdict::None);
            assert!(!row.nonzero);
            assert_eq!(row.paired_count, 0);
            assert!(row.mean_mnl.is_nan() && row.mean_eq.is_nan());
        }
    }

    #[test]
    fn renderers_format_probabilities_and_waits_differently() {
        let s = case();
        let iv = baseline_intervention();
        let samples = sample_perturbations(4, 3, 3);
        let study = run_paired_study(&s, &iv, &samples).unwrap();
        let report = build_report(&s, &iv, &study).unwrap();

        let table = render_table(&report);
        assert!(table.contains("P(OO|M)"));
        assert!(
            table.contains("0.7757"),
            "probabilities use 4 decimals:\n{table}"
        );
        assert!(table.contains("3.55"), "waits use 2 decimals:\n{table}");
        assert!(table.contains("feasible: mnl 4/4, equilibrium 4/4, solver failures 0"));

        let csv = render_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 12, "header plus 11 rows");
        assert!(lines[0].starts_with("intervention,variable,unperturbed_mnl"));
        // Full precision: the baseline opt-out probability round-trips.
        assert!(csv.contains("0.7756969724140614"));
    }

    #[test]
    fn csv_reports_parse_back_exactly() {
        let s = case();
        let ivs = builtin_interventions();
        let hp = ivs.iter().find(|iv| iv.name == "health-promotion").unwrap();
        let samples = sample_perturbations(40, 11, 3);
        let study = run_paired_study(&s, hp, &samples).unwrap();
        let report = build_report(&s, hp, &study).unwrap();
        let parsed = parse_csv(&render_csv(&report)).unwrap();
        assert_eq!(parsed, report);
        assert_eq!(render_table(&parsed), render_table(&report));
    }

    #[test]
    fn malformed_report_files_are_rejected() {
        assert!(parse_csv("").is_err());
        assert!(parse_csv("wrong,header\n").is_err());
        let valid_header = render_csv(&StudyReport {
            intervention: "x".into(),
            n_instances: 0,
            mnl_feasible: 0,
            eq_feasible: 0,
            eq_failures: 0,
            rows: Vec::new(),
        });
        // Header only, no rows.
        assert!(parse_csv(&valid_header).is_err());
        // Bad verdict text.
        let bad = format!("{}a,W(1),1,1,1,1,??,x,0,0,0,0,0\n", valid_header);
        assert!(parse_csv(&bad).is_err());
    }
}
