use realign::episode::run_episode;
use realign::error::Error;
use realign::report::{emit_report, load_report, EpisodeReport};
use realign::scenario::{Scenario, TrainedIn, SCENARIO_SCHEMA_VERSION};

fn fixture(name: &str) -> String {
    format!("{}/../../docs/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn shipped(name: &str) -> Scenario {
    Scenario::load(format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

#[test]
fn minimal_fixture_expands_to_the_documented_defaults() {
    let minimal = Scenario::load(fixture("minimal_scenario.json")).unwrap();
    let expanded = Scenario::load(fixture("minimal_scenario.expanded.json")).unwrap();
    assert_eq!(minimal, expanded);

    assert_eq!(minimal.schema_version, SCENARIO_SCHEMA_VERSION);
    assert_eq!(minimal.budget, 10);
    assert_eq!(minimal.seed, 0);
    assert!(!minimal.new_object && !minimal.force_naive_update);
    assert_eq!(minimal.deformation_magnitude, 0.15);
    assert_eq!(minimal.planner.horizon, 20);
    assert_eq!(minimal.learner.threshold, 1.0);
    assert_eq!(minimal.learner.learning_rate, 0.1);
    assert_eq!(minimal.human.effort, 0.5);
    assert_eq!(minimal.human.correction_trigger, 0.2);
    assert!(minimal.human.rationality.is_none());
    assert_eq!(minimal.robot_features[0].width, 0.5);
    assert_eq!(minimal.robot_features[0].trained_in, TrainedIn::Training);
}

#[test]
fn unknown_fields_are_named_with_their_line() {
    let text = std::fs::read_to_string(fixture("minimal_scenario.json")).unwrap();
    let bad = text.replacen("\"name\": \"minimal\",", "\"name\": \"minimal\",\n  \"horizn\": 30,", 1);
    let err = Scenario::from_json(&bad).unwrap_err();
    assert!(matches!(err, Error::Json(_)));
    let msg = err.to_string();
    assert!(msg.contains("horizn") && msg.contains("line 3"), "{msg}");
}

#[test]
fn wrong_schema_version_is_rejected() {
    let mut s = shipped("aligned");
    s.schema_version = SCENARIO_SCHEMA_VERSION + 1;
    let text = serde_json::to_string(&s).unwrap();
    assert!(matches!(Scenario::from_json(&text), Err(Error::Scenario(_))));
}

#[test]
fn scenarios_survive_a_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["aligned", "laptop_moved", "missing_feature", "new_object"] {
        let s = shipped(name);
        let path = dir.path().join(format!("{name}.json"));
        s.save(&path).unwrap();
        assert_eq!(Scenario::load(&path).unwrap(), s, "{name}");
    }
}

#[test]
fn reports_survive_a_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["laptop_moved", "missing_feature"] {
        let report = run_episode(&shipped(name)).unwrap();
        let path = dir.path().join(format!("{name}.report.json"));
        emit_report(&report, &path).unwrap();
        let back = load_report(&path).unwrap();
        assert_eq!(back, report, "{name}");
        assert_eq!(back.to_json().unwrap(), report.to_json().unwrap());
    }
}

#[test]
fn golden_report_still_parses() {
    let text = std::fs::read_to_string(fixture("laptop_moved.report.json")).unwrap();
    let report = EpisodeReport::from_json(&text).unwrap();
    assert!(report.is_consistent());
    assert_eq!(report.scenario, "laptop_moved");
    assert_eq!(report, run_episode(&shipped("laptop_moved")).unwrap());
}
