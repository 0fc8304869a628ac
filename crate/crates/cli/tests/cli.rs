use std::path::Path;
use std::process::{Command, Output};

fn kslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kslab")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, value: &serde_json::Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn reference_model() -> serde_json::Value {
    serde_json::json!({
        "background": { "kind": "zero" },
        "single_site": {
            "profile": { "kind": "indicator", "a": -1.0, "b": 0.0, "height": 1.0 },
            "lower_bar": { "c": 1.0, "interval": [-1.0, 0.0] },
            "upper_bar": 1.0,
            "positivity_interval": [-1.0, 0.0]
        },
        "coupling": { "kind": "uniform", "lo": 0.0, "hi": 1.0 },
        "e_max": 3.0
    })
}

#[test]
fn missing_e_max_fails_with_key_name() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = reference_model();
    model.as_object_mut().unwrap().remove("e_max");
    let cfg = write(dir.path(), "bad.json", &serde_json::json!({ "scenario": "identities", "model": model }));
    let out = kslab(&["identities", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("e_max"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn unknown_parameter_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &serde_json::json!({ "scenario": "spectrum", "parameters": { "sample": 3 } }));
    let out = kslab(&["spectrum", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sample"));
}

#[test]
fn config_for_another_scenario_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &serde_json::json!({ "scenario": "spectrum" }));
    let out = kslab(&["identities", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identities_pass_and_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "id.json",
        &serde_json::json!({ "scenario": "identities", "model": reference_model(), "parameters": { "instances": 6, "seed": 5 } }),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = kslab(&["identities", "--config", &cfg, "--out", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    for f in ["identities.csv", "report.json"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert_eq!(x, y, "{f} differs between runs");
    }
    let csv = std::fs::read_to_string(a.join("identities.csv")).unwrap();
    assert!(csv.starts_with("# kslab output schema v1; config_hash="));
    assert_eq!(csv.lines().count(), 2 + 7);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "id.json", &serde_json::json!({ "scenario": "identities", "parameters": { "instances": 2, "seed": 5 } }));
    let hash = |args: &[&str]| {
        let out = kslab(args);
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        text.lines().find_map(|l| l.strip_prefix("config_hash ").map(str::to_string)).expect("hash line")
    };
    let o = dir.path().to_str().unwrap();
    let base = hash(&["identities", "--config", &cfg, "--out", o]);
    let same = hash(&["identities", "--config", &cfg, "--out", o, "--seed", "5"]);
    let other = hash(&["identities", "--config", &cfg, "--out", o, "--seed", "6"]);
    assert_eq!(base, same);
    assert_ne!(base, other);
}

#[test]
fn empty_window_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = reference_model();
    model["e_max"] = serde_json::json!(0.5);
    let cfg = write(
        dir.path(),
        "s.json",
        &serde_json::json!({ "scenario": "spectrum", "model": model, "parameters": { "l_list": [1], "instances": 2 } }),
    );
    let out = kslab(&["spectrum", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = std::fs::read_to_string(dir.path().join("eigenvalues.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert_eq!(csv.lines().nth(1), Some("instance,L,k,E_shooting,E_dense,abs_diff"));
}

#[test]
fn failing_check_gives_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "n.json",
        &serde_json::json!({ "scenario": "operator-norm", "parameters": { "epsilons": [] } }),
    );
    // A 32-point grid is far too coarse for the mesh-doubling check.
    let out = kslab(&["operator-norm", "--config", &cfg, "--grid", "32", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL margin_mesh_doubling"));
    assert!(dir.path().join("norms.csv").exists());
}
