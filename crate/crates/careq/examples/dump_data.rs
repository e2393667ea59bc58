//! Regenerates the bundled case-study inputs under `data/` from the
//! programmatic definitions, so the JSON files on disk are exactly what the
//! library constructs:
//!
//! * `table1.json`  — facility supply parameters per level
//! * `table2.json`  — stated-preference utilities per patient class
//! * `interventions.json` — the ten built-in intervention specifications
//! * `baseline.json` — the calibrated baseline scenario (wait-offset method)
//!
//! Run with `cargo run -p careq --example dump_data`.

use std::fs;
use std::path::Path;

use careq::model::save_scenario;
use careq::scenario::{
    builtin_interventions, case_study_attributes, case_study_facilities, case_study_scenario,
    CalibrationMethod,
};

fn write_pretty<T: serde::Serialize>(path: &Path, value: &T) {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).unwrap_or_else(|e| panic!("writing {}: {e}", path.display()));
    println!("wrote {}", path.display());
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    fs::create_dir_all(&dir).expect("creating data directory");

    write_pretty(&dir.join("table1.json"), &case_study_facilities());
    write_pretty(&dir.join("table2.json"), &case_study_attributes());
    write_pretty(&dir.join("interventions.json"), &builtin_interventions());

    let (baseline, calibration) =
        case_study_scenario(CalibrationMethod::WaitOffsets).expect("calibration succeeds");
    let path = dir.join("baseline.json");
    save_scenario(&path, &baseline).expect("writing baseline scenario");
    println!(
        "wrote {} (calibration residual {:.3e})",
        path.display(),
        calibration.residual
    );
}
