//! The bundled JSON inputs under `data/` must stay bit-identical to the
//! programmatic definitions they were generated from (see the `dump_data`
//! example). Any drift means either the files or the tables were edited
//! without the other.

use std::path::{Path, PathBuf};

use careq::model::load_scenario;
use careq::scenario::{
    builtin_interventions, case_study_attributes, case_study_facilities, case_study_scenario,
    load_interventions, AttributeUtilities, CalibrationMethod, FacilityParameters,
};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn parse<T: serde::de::DeserializeOwned>(name: &str) -> T {
    let path = data_dir().join(name);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parsing {}: {e}", path.display()))
}

#[test]
fn bundled_supply_table_matches_the_built_in_definition() {
    let parsed: FacilityParameters = parse("table1.json");
    assert_eq!(parsed, case_study_facilities());
    assert!(parsed.validate().is_empty());
}

#[test]
fn bundled_preference_table_matches_the_built_in_definition() {
    let parsed: AttributeUtilities = parse("table2.json");
    assert_eq!(parsed, case_study_attributes());
    assert!(parsed.validate().is_empty());
}

#[test]
fn bundled_interventions_match_the_built_in_set() {
    let parsed = load_interventions(data_dir().join("interventions.json")).unwrap();
    assert_eq!(parsed, builtin_interventions());
}

#[test]
fn bundled_baseline_matches_a_fresh_calibration() {
    let parsed = load_scenario(data_dir().join("baseline.json")).unwrap();
    let (built, calibration) = case_study_scenario(CalibrationMethod::WaitOffsets).unwrap();
    assert_eq!(parsed, built);
    assert!(calibration.residual <= 1e-9);
}

#[test]
fn bundled_baseline_round_trips_through_save() {
    let parsed = load_scenario(data_dir().join("baseline.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("baseline.json");
    careq::model::save_scenario(&copy, &parsed).unwrap();
    assert_eq!(
        std::fs::read_to_string(copy).unwrap(),
        std::fs::read_to_string(data_dir().join("baseline.json")).unwrap()
    );
}
