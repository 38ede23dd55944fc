use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pedwarn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pedwarn"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("PEDWARN_ROUTE_URL")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_run_eval_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(pedwarn(&["simulate", "--scenario", "conflict15", "--seed", "3"], d)
        .status
        .success());
    for f in [
        "detections.jsonl",
        "ego.jsonl",
        "truth.jsonl",
        "route.json",
        "scenario.json",
    ] {
        assert!(d.join(f).exists(), "{f}");
    }
    let run = pedwarn(&["run"], d);
    assert!(run.status.success(), "{}", stderr(&run));
    let summary: serde_json::Value = serde_json::from_str(stderr(&run).trim()).unwrap();
    assert!(summary["warnings"].as_u64().unwrap() >= 1);
    let warnings = fs::read_to_string(d.join("warnings.jsonl")).unwrap();
    assert!(!warnings.is_empty());
    for line in warnings.lines() {
        let w: serde_json::Map<String, serde_json::Value> = serde_json::from_str(line).unwrap();
        let keys: Vec<&str> = w.keys().map(String::as_str).collect();
        let mut expected = ["t", "id", "class", "severity", "direction", "utterance", "t_veh", "s"];
        expected.sort();
        assert_eq!(keys, expected);
        assert!(w["t"].is_f64() && w["t_veh"].is_f64() && w["s"].is_f64() && w["id"].is_u64());
        assert!(["early", "emergency"].contains(&w["severity"].as_str().unwrap()));
        assert!(["left", "ahead", "right"].contains(&w["direction"].as_str().unwrap()));
    }

    let eval = pedwarn(&["eval", "--logs", d.to_str().unwrap()], d);
    assert!(eval.status.success(), "{}", stderr(&eval));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["aggregate"]["runs"], 1);

    for kind in ["trajectory", "timeline"] {
        let o = pedwarn(&["plot", "--kind", kind], d);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(fs::read_to_string(d.join(format!("{kind}.svg")))
            .unwrap()
            .starts_with("<svg"));
    }
}

#[test]
fn empty_detection_log_gives_empty_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(pedwarn(&["simulate", "--scenario", "fig6"], d).status.success());
    fs::write(d.join("detections.jsonl"), "").unwrap();
    let o = pedwarn(&["run"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(d.join("warnings.jsonl")).unwrap(), "");

    let o = pedwarn(&["plot", "--kind", "trajectory"], d);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
    let svg = fs::read_to_string(d.join("trajectory.svg")).unwrap();
    assert!(svg.contains("axes") && !svg.contains("<polyline"));
}

#[test]
fn malformed_line_is_reported_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(pedwarn(&["simulate", "--scenario", "fig6"], d).status.success());
    let text = fs::read_to_string(d.join("detections.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[4] = "{not json";
    fs::write(d.join("detections.jsonl"), lines.join("\n")).unwrap();
    let o = pedwarn(&["run"], d);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error:") && err.contains("line 5"), "{err}");
}

#[test]
fn unknown_preset_and_config_field_fail() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = pedwarn(&["simulate", "--scenario", "nope"], d);
    assert_eq!(o.status.code(), Some(1));
    let cfg = d.join("cfg.json");
    fs::write(&cfg, r#"{"tracking": {"bogus": 1}}"#).unwrap();
    let o = pedwarn(&["simulate", "--config", cfg.to_str().unwrap()], d);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn batch_eval_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = pedwarn(&["eval", "--scenario", "conflict15", "--seeds", "8"], d);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ra = fs::read(a.join("eval.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("eval.json")).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(v["aggregate"]["runs"], 8);
}

#[test]
fn preset_lists_and_prints_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let o = pedwarn(&["preset"], dir.path());
    let list = String::from_utf8_lossy(&o.stdout);
    for name in ["fig5", "fig6", "fig7", "fig8", "conflict15"] {
        assert!(list.contains(name));
    }
    let o = pedwarn(&["preset", "fig8"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["name"], "fig8");
}

#[test]
fn line_provider_replays_without_route_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(pedwarn(&["simulate", "--scenario", "conflict15"], d).status.success());
    fs::remove_file(d.join("route.json")).unwrap();
    let o = pedwarn(&["run", "--route-provider", "line"], d);
    assert!(o.status.success(), "{}", stderr(&o));
}
