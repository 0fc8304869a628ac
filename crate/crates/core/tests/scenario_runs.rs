use kslab::scenario::{run_scenario, Parameters, ScenarioConfig, ScenarioKind};

fn config(kind: ScenarioKind, dir: &std::path::Path, params: Parameters) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(kind);
    c.parameters = params;
    c.output_dir = dir.to_path_buf();
    c
}

#[test]
fn spectrum_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let params = Parameters { l_list: Some(vec![1, 2]), instances: Some(3), ..Default::default() };
    let a = run_scenario(&config(ScenarioKind::Spectrum, &dir.path().join("a"), params.clone())).unwrap();
    let b = run_scenario(&config(ScenarioKind::Spectrum, &dir.path().join("b"), params)).unwrap();
    assert!(a.passed(), "{:?}", a.checks);
    assert_eq!(a.config_hash, b.config_hash);
    for f in &a.files {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn small_correlator_run_writes_series_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let params = Parameters {
        l_list: Some(vec![4]),
        n_list: Some(vec![1, 2, 3, 4]),
        samples: Some(40),
        min_distance: Some(1),
        e_grid: Some(vec![0.0]),
        ..Default::default()
    };
    let r = run_scenario(&config(ScenarioKind::CorrelatorDecay, dir.path(), params)).unwrap();
    for f in ["correlator_series.csv", "decay_fit.json", "report.json"] {
        assert!(r.files.iter().any(|x| x == f), "{f} missing from {:?}", r.files);
        assert!(dir.path().join(f).exists());
    }
    let csv = std::fs::read_to_string(dir.path().join("correlator_series.csv")).unwrap();
    assert!(csv.starts_with(&format!("# kslab output schema v1; config_hash={}", r.config_hash)));
    assert_eq!(csv.lines().count(), 2 + 4);
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("decay_fit.json")).unwrap()).unwrap();
    assert_eq!(fit["schema_version"], 1);
    assert_eq!(fit["config_hash"], r.config_hash.as_str());
    assert!(r.checks.iter().any(|c| c.name == "means_nonnegative" && c.passed));
}

#[test]
fn invalid_parameters_fail_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let params = Parameters { samples: Some(1), ..Default::default() };
    assert!(run_scenario(&config(ScenarioKind::CorrelatorDecay, &dir.path().join("x"), params)).is_err());
    assert!(!dir.path().join("x").exists());
}
