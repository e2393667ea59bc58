//! Command-line front end: solve scenarios, calibrate them to reference
//! waits, compare interventions, run perturbation studies, and re-render
//! saved reports.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 usage error,
//! 2 invalid data or validation failure, 3 numerical failure. Every file
//! written under `--out` is accompanied by a `manifest.json` capturing the
//! command, input digests, seed, and settings needed to reproduce it
//! byte-for-byte.

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use careq::equilibrium::{solve, SolveError, SolverSettings, StartPoint};
use careq::experiment::{
    build_report, parse_csv, render_csv, render_table, run_paired_study, sample_perturbations,
    variable_labels,
};
use careq::model::{load_scenario, save_scenario, ModelError, Scenario};
use careq::scenario::{
    apply_intervention, baseline_intervention, builtin_interventions, calibrate,
    load_interventions, mnl_only_evaluate, CalibrationMethod, InterventionSpec, ScenarioError,
};

#[derive(Parser)]
#[command(
    name = "careq",
    version,
    about = "Hospital-choice equilibrium under congestion",
    after_help = "Exit codes: 0 success, 1 usage error, 2 invalid data, 3 numerical failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Output rendering for tabular results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Aligned text, probabilities to 4 decimals and waits to 2.
    Table,
    /// Comma-separated values at full floating-point precision.
    Csv,
}

/// CLI face of [`CalibrationMethod`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Keep nominal capacities, fit per-level zero-flow wait offsets.
    WaitOffsets,
    /// Keep wait offsets, fit per-level capacity factors.
    CapacityFactors,
}

impl From<MethodArg> for CalibrationMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::WaitOffsets => CalibrationMethod::WaitOffsets,
            MethodArg::CapacityFactors => CalibrationMethod::CapacityFactors,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute the unique equilibrium of a scenario.
    Solve {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Convergence tolerance on the normalized gradient sup-norm.
        #[arg(long, default_value_t = 1e-10)]
        grad_tol: f64,
        /// Iteration budget of the minimizer.
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
        max_iters: u64,
        /// Start point: "zero", "reference", or comma-separated waits.
        #[arg(long, default_value = "zero")]
        start: String,
        /// Stdout rendering.
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Directory for equilibrium.csv, equilibrium.txt, manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate a scenario so its equilibrium hits the reference waits.
    Calibrate {
        /// Scenario JSON file; must carry reference_waits.
        scenario: PathBuf,
        /// Which parameter absorbs the calibration.
        #[arg(long, value_enum, default_value_t = MethodArg::WaitOffsets)]
        method: MethodArg,
        /// Directory for calibration.json, calibrated.json, manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare congestion-blind and equilibrium outcomes of one intervention.
    Intervene {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Built-in intervention name, "baseline", or a spec JSON file.
        intervention: String,
        /// Stdout rendering.
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Directory for comparison.csv, comparison.txt, manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a paired perturbation study of one intervention.
    Study {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Built-in intervention name, "baseline", or a spec JSON file.
        intervention: String,
        /// Number of perturbed instances.
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        instances: u64,
        /// Master seed of the perturbation stream.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Stdout rendering.
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Directory for report.csv, report.txt, manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render a saved study report CSV.
    Report {
        /// A report.csv produced by the study command.
        report: PathBuf,
        /// Stdout rendering.
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Directory for report.csv, report.txt, manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Error carrying its scripting exit code.
#[derive(Debug)]
enum CliError {
    /// Bad invocation: unknown names, malformed flag values.
    Usage(String),
    /// Invalid data: unreadable or unparsable files, validation failures,
    /// impossible calibration targets.
    Validation(String),
    /// Numerical failure: the solver did not converge.
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::MaxIters { .. } | SolveError::OracleDiverged(_) => {
                CliError::Numerical(e.to_string())
            }
            SolveError::Invalid(_) | SolveError::NonSaturation { .. } => {
                CliError::Validation(e.to_string())
            }
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Solve(inner) => inner.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

/// One input file's identity in a manifest.
#[derive(Debug, Serialize)]
struct ManifestInput {
    path: String,
    sha256: String,
}

/// Everything needed to reproduce a run's outputs byte-for-byte: no
/// timestamps, no environment state.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    artifact_version: String,
    inputs: Vec<ManifestInput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    intervention: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    master_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    instances: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iters: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<String>,
    outputs: Vec<String>,
}

fn sha256_hex(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    Ok(hex)
}

fn manifest_input(path: &Path) -> Result<ManifestInput, CliError> {
    Ok(ManifestInput {
        path: path.display().to_string(),
        sha256: sha256_hex(path)?,
    })
}

fn write_output(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, content)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialization cannot fail");
    write_output(dir, "manifest.json", &(text + "\n"))
}

/// Right-aligns rows of cells into fixed-width columns.
fn aligned(rows: &[Vec<String>]) -> String {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; columns];
    for row in rows {
        for (j, cell) in row.iter().enumerate() {
            widths[j] = widths[j].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{cell:>width$}", width = widths[j]);
        }
        out.push('\n');
    }
    out
}

/// Resolves an intervention argument: the named no-op baseline, a built-in
/// name, or a JSON file holding one spec (bare or as a one-element array).
fn resolve_intervention(arg: &str) -> Result<InterventionSpec, CliError> {
    if arg == "baseline" {
        return Ok(baseline_intervention());
    }
    let builtins = builtin_interventions();
    if let Some(found) = builtins.iter().find(|iv| iv.name == arg) {
        return Ok(found.clone());
    }
    let path = Path::new(arg);
    if path.exists() {
        let specs: Vec<InterventionSpec> = match load_interventions(path) {
            Ok(list) => list,
            // A bare object instead of an array is also accepted.
            Err(_) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Validation(format!("cannot read {}: {e}", path.display()))
                })?;
                vec![serde_json::from_str(&text).map_err(|e| {
                    CliError::Validation(format!("cannot parse {}: {e}", path.display()))
                })?]
            }
        };
        return match <[InterventionSpec; 1]>::try_from(specs) {
            Ok([spec]) => Ok(spec),
            Err(list) => Err(CliError::Validation(format!(
                "{} holds {} interventions; pass a file with exactly one",
                path.display(),
                list.len()
            ))),
        };
    }
    let mut known: Vec<&str> = builtins.iter().map(|iv| iv.name.as_str()).collect();
    known.insert(0, "baseline");
    Err(CliError::Usage(format!(
        "unknown intervention {arg:?}; expected one of {} or a spec file",
        known.join(", ")
    )))
}

fn parse_start(text: &str) -> Result<StartPoint, CliError> {
    match text {
        "zero" | "zero-flow" => Ok(StartPoint::ZeroFlow),
        "reference" => Ok(StartPoint::Reference),
        other => {
            let waits: Result<Vec<f64>, _> =
                other.split(',').map(|w| w.trim().parse::<f64>()).collect();
            match waits {
                Ok(w) if !w.is_empty() => Ok(StartPoint::Explicit(w)),
                _ => Err(CliError::Usage(format!(
                    "--start must be \"zero\", \"reference\", or comma-separated waits; \
                     got {other:?}"
                ))),
            }
        }
    }
}

fn alternative_names(s: &Scenario) -> Vec<String> {
    let mut names = vec!["opt-out".to_string()];
    names.extend(s.levels.iter().map(|l| l.id.clone()));
    names
}

fn render_equilibrium_table(s: &Scenario, eq: &careq::model::Equilibrium) -> String {
    let mut out = format!(
        "converged in {} iterations; objective {:.12e}; normalized gradient norm {:.3e}\n",
        eq.iterations, eq.objective, eq.grad_norm
    );
    let _ = writeln!(out, "feasible (all waits within 10 h): {}", eq.feasible);
    out.push('\n');

    let mut rows = vec![vec![
        "level".to_string(),
        "wait (h)".to_string(),
        "flow (/year)".to_string(),
    ]];
    for (i, level) in s.levels.iter().enumerate() {
        rows.push(vec![
            level.id.clone(),
            format!("{:.2}", eq.waits[i]),
            format!("{:.1}", eq.flows[i]),
        ]);
    }
    out.push_str(&aligned(&rows));
    out.push('\n');

    out.push_str("choice probabilities\n");
    let mut rows = vec![{
        let mut header = vec!["class".to_string()];
        header.extend(alternative_names(s));
        header
    }];
    for (k, class) in s.classes.iter().enumerate() {
        let mut row = vec![class.id.clone()];
        row.extend(eq.choice[k].iter().map(|p| format!("{p:.4}")));
        rows.push(row);
    }
    out.push_str(&aligned(&rows));
    out
}

fn render_equilibrium_csv(s: &Scenario, eq: &careq::model::Equilibrium) -> String {
    let mut out = String::from("quantity,class,level,value\n");
    let _ = writeln!(out, "iterations,,,{}", eq.iterations);
    let _ = writeln!(out, "objective,,,{}", eq.objective);
    let _ = writeln!(out, "grad_norm,,,{}", eq.grad_norm);
    let _ = writeln!(out, "feasible,,,{}", eq.feasible);
    for (i, level) in s.levels.iter().enumerate() {
        let _ = writeln!(out, "wait,,{},{}", level.id, eq.waits[i]);
    }
    for (i, level) in s.levels.iter().enumerate() {
        let _ = writeln!(out, "flow,,{},{}", level.id, eq.flows[i]);
    }
    let alternatives = alternative_names(s);
    for (k, class) in s.classes.iter().enumerate() {
        for (j, name) in alternatives.iter().enumerate() {
            let _ = writeln!(out, "choice,{},{},{}", class.id, name, eq.choice[k][j]);
        }
    }
    out
}

fn cmd_solve(
    scenario_path: &Path,
    grad_tol: f64,
    max_iters: u64,
    start: &str,
    format: Format,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if !(grad_tol.is_finite() && grad_tol > 0.0) {
        return Err(CliError::Usage(format!(
            "--grad-tol must be positive and finite, got {grad_tol}"
        )));
    }
    let s = load_scenario(scenario_path)?;
    let settings = SolverSettings {
        grad_tol,
        max_iters: max_iters as usize,
        start: parse_start(start)?,
        ..Default::default()
    };
    let eq = solve(&s, &settings)?;

    let table = render_equilibrium_table(&s, &eq);
    let csv = render_equilibrium_csv(&s, &eq);
    print!(
        "{}",
        match format {
            Format::Table => &table,
            Format::Csv => &csv,
        }
    );
    if let Some(dir) = out {
        write_output(dir, "equilibrium.txt", &table)?;
        write_output(dir, "equilibrium.csv", &csv)?;
        let manifest = RunManifest {
            command: "solve".into(),
            artifact_version: careq::VERSION.into(),
            inputs: vec![manifest_input(scenario_path)?],
            intervention: None,
            master_seed: None,
            instances: None,
            grad_tol: Some(grad_tol),
            max_iters: Some(max_iters),
            start: Some(start.to_string()),
            method: None,
            outputs: vec!["equilibrium.txt".into(), "equilibrium.csv".into()],
        };
        write_manifest(dir, &manifest)?;
    }
    Ok(())
}

fn cmd_calibrate(
    scenario_path: &Path,
    method: MethodArg,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let s = load_scenario(scenario_path)?;
    let w_ref = s.reference_waits.clone().ok_or_else(|| {
        CliError::Validation(format!(
            "{} has no reference_waits to calibrate against",
            scenario_path.display()
        ))
    })?;
    let (calibrated, result) = calibrate(&s, &w_ref, method.into())?;

    let mut text = format!("calibration method: {}\n", method_name(method));
    let _ = writeln!(text, "mild share: {}", result.mild_share);
    let mut rows = vec![vec![
        "level".to_string(),
        "capacity factor".to_string(),
        "wait offset (h)".to_string(),
    ]];
    for (i, level) in calibrated.levels.iter().enumerate() {
        rows.push(vec![
            level.id.clone(),
            format!("{:.6}", result.capacity_factors[i]),
            format!("{:.6}", result.wait_offsets[i]),
        ]);
    }
    text.push_str(&aligned(&rows));
    let _ = writeln!(
        text,
        "residual: {:.3e} h (max |equilibrium wait - reference wait|)",
        result.residual
    );
    print!("{text}");

    if let Some(dir) = out {
        let result_json = serde_json::to_string_pretty(&result)
            .expect("calibration result serialization cannot fail");
        write_output(dir, "calibration.json", &(result_json + "\n"))?;
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))?;
        save_scenario(dir.join("calibrated.json"), &calibrated)?;
        let manifest = RunManifest {
            command: "calibrate".into(),
            artifact_version: careq::VERSION.into(),
            inputs: vec![manifest_input(scenario_path)?],
            intervention: None,
            master_seed: None,
            instances: None,
            grad_tol: None,
            max_iters: None,
            start: None,
            method: Some(method_name(method).into()),
            outputs: vec!["calibration.json".into(), "calibrated.json".into()],
        };
        write_manifest(dir, &manifest)?;
    }
    Ok(())
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::WaitOffsets => "wait-offsets",
        MethodArg::CapacityFactors => "capacity-factors",
    }
}

fn flatten_outcome(choice: &[Vec<f64>], waits: &[f64], opt_out_enabled: bool) -> Vec<f64> {
    let mut values = Vec::new();
    for row in choice {
        values.extend_from_slice(&row[usize::from(!opt_out_enabled)..]);
    }
    values.extend_from_slice(waits);
    values
}

fn cmd_intervene(
    scenario_path: &Path,
    intervention: &str,
    format: Format,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let s = load_scenario(scenario_path)?;
    let iv = resolve_intervention(intervention)?;
    let mnl = mnl_only_evaluate(&s, &iv)?;
    let eq = solve(&apply_intervention(&s, &iv)?, &SolverSettings::default())?;

    let labels = variable_labels(&s);
    let mnl_values = flatten_outcome(&mnl.choice, &mnl.waits, s.opt_out_enabled);
    let eq_values = flatten_outcome(&eq.choice, &eq.waits, s.opt_out_enabled);

    let mut rows = vec![vec![
        "variable".to_string(),
        "mnl".to_string(),
        "equilibrium".to_string(),
        "difference".to_string(),
    ]];
    for (v, label) in labels.iter().enumerate() {
        let decimals = if label.starts_with('W') { 2 } else { 4 };
        rows.push(vec![
            label.clone(),
            format!("{:.decimals$}", mnl_values[v]),
            format!("{:.decimals$}", eq_values[v]),
            format!("{:.decimals$}", eq_values[v] - mnl_values[v]),
        ]);
    }
    let table = format!("intervention: {}\n{}", iv.name, aligned(&rows));

    let mut csv = String::from("intervention,variable,mnl,equilibrium,difference\n");
    for (v, label) in labels.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            iv.name,
            label,
            mnl_values[v],
            eq_values[v],
            eq_values[v] - mnl_values[v]
        );
    }

    print!(
        "{}",
        match format {
            Format::Table => &table,
            Format::Csv => &csv,
        }
    );
    if let Some(dir) = out {
        write_output(dir, "comparison.txt", &table)?;
        write_output(dir, "comparison.csv", &csv)?;
        let mut inputs = vec![manifest_input(scenario_path)?];
        if Path::new(intervention).exists() {
            inputs.push(manifest_input(Path::new(intervention))?);
        }
        let manifest = RunManifest {
            command: "intervene".into(),
            artifact_version: careq::VERSION.into(),
            inputs,
            intervention: Some(iv.name.clone()),
            master_seed: None,
            instances: None,
            grad_tol: None,
            max_iters: None,
            start: None,
            method: None,
            outputs: vec!["comparison.txt".into(), "comparison.csv".into()],
        };
        write_manifest(dir, &manifest)?;
    }
    Ok(())
}

fn cmd_study(
    scenario_path: &Path,
    intervention: &str,
    instances: u64,
    seed: u64,
    format: Format,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let s = load_scenario(scenario_path)?;
    let iv = resolve_intervention(intervention)?;
    let samples = sample_perturbations(instances as usize, seed, s.levels.len());
    let study = run_paired_study(&s, &iv, &samples)?;
    let report = build_report(&s, &iv, &study)?;

    let table = render_table(&report);
    let csv = render_csv(&report);
    print!(
        "{}",
        match format {
            Format::Table => &table,
            Format::Csv => &csv,
        }
    );
    if let Some(dir) = out {
        write_output(dir, "report.txt", &table)?;
        write_output(dir, "report.csv", &csv)?;
        let mut inputs = vec![manifest_input(scenario_path)?];
        if Path::new(intervention).exists() {
            inputs.push(manifest_input(Path::new(intervention))?);
        }
        let manifest = RunManifest {
            command: "study".into(),
            artifact_version: careq::VERSION.into(),
            inputs,
            intervention: Some(iv.name.clone()),
            master_seed: Some(seed),
            instances: Some(instances),
            grad_tol: None,
            max_iters: None,
            start: None,
            method: None,
            outputs: vec!["report.txt".into(), "report.csv".into()],
        };
        write_manifest(dir, &manifest)?;
    }
    Ok(())
}

fn cmd_report(report_path: &Path, format: Format, out: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(report_path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", report_path.display())))?;
    let report = parse_csv(&text).map_err(|e| CliError::Validation(e.to_string()))?;

    let table = render_table(&report);
    let csv = render_csv(&report);
    print!(
        "{}",
        match format {
            Format::Table => &table,
            Format::Csv => &csv,
        }
    );
    if let Some(dir) = out {
        write_output(dir, "report.txt", &table)?;
        write_output(dir, "report.csv", &csv)?;
        let manifest = RunManifest {
            command: "report".into(),
            artifact_version: careq::VERSION.into(),
            inputs: vec![manifest_input(report_path)?],
            intervention: Some(report.intervention.clone()),
            master_seed: None,
            instances: None,
            grad_tol: None,
            max_iters: None,
            start: None,
            method: None,
            outputs: vec!["report.txt".into(), "report.csv".into()],
        };
        write_manifest(dir, &manifest)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve {
            scenario,
            grad_tol,
            max_iters,
            start,
            format,
            out,
        } => cmd_solve(
            scenario,
            *grad_tol,
            *max_iters,
            start,
            *format,
            out.as_deref(),
        ),
        Command::Calibrate {
            scenario,
            method,
            out,
        } => cmd_calibrate(scenario, *method, out.as_deref()),
        Command::Intervene {
            scenario,
            intervention,
            format,
            out,
        } => cmd_intervene(scenario, intervention, *format, out.as_deref()),
        Command::Study {
            scenario,
            intervention,
            instances,
            seed,
            format,
            out,
        } => cmd_study(
            scenario,
            intervention,
            *instances,
            *seed,
            *format,
            out.as_deref(),
        ),
        Command::Report {
            report,
            format,
            out,
        } => cmd_report(report, *format, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successes; everything else is a usage
            // error (clap's own default of 2 is reserved for data errors
            // here).
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
